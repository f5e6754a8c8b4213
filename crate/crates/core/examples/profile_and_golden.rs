use gemmguard::analysis::compute_v_orig;
use gemmguard::model::{Dataset, ToyConfig};
use gemmguard::profiler::{profile_ranges, select_golden};

fn main() {
    let model = ToyConfig::new(2, 32, 4, 10, 3).build().unwrap();
    // shift half the labels so some samples fall outside the golden set
    let data = Dataset::teacher_labeled(&model, 200, 4).unwrap();
    let mixed = Dataset::new(
        data.samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if s.id % 2 == 1 {
                    s.label = (s.label + 1) % 10;
                }
                s
            })
            .collect(),
    );
    let golden = select_golden(&model, &mixed).unwrap();
    println!("golden: {} of {} samples", golden.len(), mixed.len());

    let ranges = profile_ranges(&model, &data).unwrap();
    let v = compute_v_orig(&model);
    for l in &model.layers {
        let r = ranges.get(l.index).unwrap();
        println!(
            "{:<20} out [{:>8.3}, {:>8.3}] in [{:>8.3}, {:>8.3}] v_orig {:.4}",
            l.name, r.min, r.max, r.input_min, r.input_max, v[l.index]
        );
    }
}

use std::collections::BTreeMap;

use gemmguard::guard::{
    calibrate_epsilon, choose_checksum_precision, offline_checksums, verify_layer, CalibrationStatistic,
};
use gemmguard::model::{forward, Dataset, Tap, ToyConfig};
use gemmguard::numerics::{DType, Precision};
use gemmguard::profiler::{profile_ranges, select_golden};

fn main() {
    let model = ToyConfig::new(2, 64, 4, 10, 11).with_dtype(DType::F16).build().unwrap();
    let data = Dataset::teacher_labeled(&model, 400, 12).unwrap();
    let golden = select_golden(&model, &data).unwrap();
    let ranges = profile_ranges(&model, &data).unwrap();

    let auto = choose_checksum_precision(&model, &ranges).unwrap();
    for (l, c) in &auto {
        println!("layer {l:>2}: suggested checksum precision {}", c.precision);
    }

    let ps: BTreeMap<usize, Precision> = model.layers.iter().map(|l| (l.index, Precision::F64)).collect();
    let chks = offline_checksums(&model, &ps).unwrap();
    let eps =
        calibrate_epsilon(&model, &data, &golden.take(300), &chks, 0.9999, CalibrationStatistic::PerSample).unwrap();
    for e in eps.values() {
        println!("layer {:>2}: mu {:+.2e} sigma {:.2e} -> [{:+.3e}, {:+.3e}]", e.layer_index, e.mu, e.sigma, e.threshold_low, e.threshold_high);
    }

    let s = &data.samples[350];
    let t = forward(&model, &s.input, s.label, &Tap::layer(3)).unwrap();
    let tap = &t.taps[&3];
    let clean = verify_layer(&tap.input, &tap.output, &chks[&3], Some(&eps[&3])).unwrap();
    println!("clean layer 3: max |d| {:.3e} triggered {}", clean.max_discrepancy, clean.triggered);
    let mut y = tap.output.clone();
    y.set_flat(7, y.data()[7] + 0.5).unwrap();
    let bad = verify_layer(&tap.input, &y, &chks[&3], Some(&eps[&3])).unwrap();
    println!("corrupted layer 3: rows {:?} flagged, d = {:.3e}", bad.flagged, bad.d[bad.flagged[0]]);
}

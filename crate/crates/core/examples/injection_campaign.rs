use gemmguard::injector::{run_campaign, write_campaign_csv, CampaignConfig, Location, Mode};
use gemmguard::model::{Dataset, ToyConfig};
use gemmguard::profiler::{profile_ranges, select_golden};

fn main() {
    let model = ToyConfig::new(2, 32, 4, 10, 5).build().unwrap();
    let data = Dataset::teacher_labeled(&model, 300, 6).unwrap();
    let golden = select_golden(&model, &data).unwrap();
    let ranges = profile_ranges(&model, &data).unwrap();

    let cfg = CampaignConfig::new(100, 42)
        .with_modes(vec![Mode::FpExponentBit, Mode::FpMantissaBit, Mode::RandomValue])
        .with_locations(vec![Location::Output, Location::Weight]);
    let result = run_campaign(&model, &data, &golden, &ranges, &cfg).unwrap();
    for (layer, t) in result.tallies() {
        println!("layer {layer:>2}: {:>4} injections {:>3} mismatches {} skipped", t.injections, t.mismatches, t.skipped);
    }
    let mut out = Vec::new();
    write_campaign_csv(&mut out, &result.records[..5], Some("seed=42")).unwrap();
    print!("{}", String::from_utf8(out).unwrap());
}

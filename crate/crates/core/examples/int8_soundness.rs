use std::collections::BTreeMap;

use gemmguard::analysis::{ProtectionPlan, Scheme};
use gemmguard::guard::{evaluate_detection, offline_checksums};
use gemmguard::injector::{CampaignConfig, Location, Mode};
use gemmguard::model::{Dataset, ToyConfig};
use gemmguard::numerics::{DType, Precision};
use gemmguard::profiler::{profile_ranges, select_golden};

fn main() {
    let model = ToyConfig::new(2, 64, 4, 10, 15).with_dtype(DType::I8).build().unwrap();
    let data = Dataset::teacher_labeled(&model, 200, 16).unwrap();
    let golden = select_golden(&model, &data).unwrap();
    let ranges = profile_ranges(&model, &data).unwrap();
    let ps: BTreeMap<usize, Precision> = model.layers.iter().map(|l| (l.index, Precision::I64Exact)).collect();
    let chks = offline_checksums(&model, &ps).unwrap();
    let plan = ProtectionPlan::with_layers(Scheme::Checksum, 0..model.layers.len());

    let cfg = CampaignConfig::new(200, 17)
        .with_modes(vec![Mode::IntBit])
        .with_locations(vec![Location::Input, Location::Weight, Location::Output]);
    let rep = evaluate_detection(&model, &data, &golden, &ranges, &cfg, &plan, &chks, &BTreeMap::new()).unwrap();
    let t = rep.total();
    println!(
        "{} int flips: {} detected at the faulted layer, {} mismatches all detected: {}",
        t.injections,
        rep.points.iter().filter(|p| p.fault_layer_triggered).count(),
        t.mismatches,
        t.missed_mismatches == 0
    );
    for (layer, lt) in rep.per_layer() {
        println!("  layer {layer:>2}: {}/{} detected", lt.detected_mismatches + lt.detected_benign, lt.injections);
    }
}

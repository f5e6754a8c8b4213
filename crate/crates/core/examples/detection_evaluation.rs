use std::collections::BTreeMap;

use gemmguard::analysis::{ProtectionPlan, Scheme};
use gemmguard::guard::{
    calibrate_epsilon, clean_false_positives, evaluate_detection, offline_checksums, CalibrationStatistic,
};
use gemmguard::injector::CampaignConfig;
use gemmguard::model::{Dataset, Sample, ToyConfig};
use gemmguard::numerics::{DType, Precision};
use gemmguard::profiler::{profile_ranges, select_golden};

fn main() {
    let model = ToyConfig::new(2, 64, 4, 10, 19).with_dtype(DType::F16).build().unwrap();
    let data = Dataset::teacher_labeled(&model, 1000, 20).unwrap();
    let golden = select_golden(&model, &data).unwrap();
    let ranges = profile_ranges(&model, &data).unwrap();
    let ps: BTreeMap<usize, Precision> = model.layers.iter().map(|l| (l.index, Precision::F64)).collect();
    let chks = offline_checksums(&model, &ps).unwrap();
    let cal = golden.take(500);
    let eps = calibrate_epsilon(&model, &data, &cal, &chks, 0.9999, CalibrationStatistic::PerSample).unwrap();
    let plan = ProtectionPlan::with_layers(Scheme::Checksum, 0..model.layers.len());

    let held = golden.skip(500);
    let samples: Vec<&Sample> = held.samples(&data).unwrap().into_iter().map(|(_, s)| s).collect();
    let clean = clean_false_positives(&model, samples, &plan, &chks, &eps).unwrap();
    println!(
        "clean: {}/{} rows flagged ({:.2e}), {}/{} inferences",
        clean.flagged_rows,
        clean.checked_rows,
        clean.row_rate(),
        clean.flagged_inferences,
        clean.inferences
    );

    let rep = evaluate_detection(&model, &data, &golden, &ranges, &CampaignConfig::new(300, 21), &plan, &chks, &eps)
        .unwrap();
    let t = rep.total();
    println!(
        "{} injections: {} mismatches, {} detected, {} missed; {} benign detected",
        t.injections, t.mismatches, t.detected_mismatches, t.missed_mismatches, t.detected_benign
    );
    if let Some(c) = t.coverage() {
        println!("mismatch coverage {:.4}", c);
    }
    println!("shifts past threshold + rounding bound: {} (all flagged: {})", t.guaranteed, t.guaranteed == t.guaranteed_triggered);
}

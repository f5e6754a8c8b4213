use std::collections::BTreeMap;

use gemmguard::analysis::{ProtectionPlan, Scheme};
use gemmguard::guard::{calibrate_epsilon, offline_checksums, protected_forward, CalibrationStatistic, CorrectionPolicy};
use gemmguard::injector::{InjectionSpec, Location, Mode, SpecFault};
use gemmguard::model::{forward, Dataset, SkipKind, Tap, ToyConfig};
use gemmguard::numerics::{DType, Precision};
use gemmguard::profiler::select_golden;

fn main() {
    let model = ToyConfig::new(2, 32, 4, 10, 13).with_dtype(DType::F16).build().unwrap();
    let data = Dataset::teacher_labeled(&model, 200, 14).unwrap();
    let golden = select_golden(&model, &data).unwrap();
    let ps: BTreeMap<usize, Precision> = model.layers.iter().map(|l| (l.index, Precision::F64)).collect();
    let chks = offline_checksums(&model, &ps).unwrap();
    let eps = calibrate_epsilon(&model, &data, &golden, &chks, 0.9999, CalibrationStatistic::PerSample).unwrap();
    let plan = ProtectionPlan::with_layers(Scheme::Checksum, 0..model.layers.len());

    let s = &data.samples[0];
    let clean = forward(&model, &s.input, s.label, &Tap::None).unwrap();
    let spec = InjectionSpec {
        layer_index: 4,
        location: Location::Output,
        element: 17,
        bit_index: Some(14),
        mode: Mode::FpExponentBit,
        replacement: None,
        sample_id: s.id,
        seed: 0,
    };
    let policies = [
        None,
        Some(CorrectionPolicy::replay(3)),
        Some(CorrectionPolicy::skip(SkipKind::SameSize)),
        Some(CorrectionPolicy::skip(SkipKind::NextBlock)),
    ];
    for policy in policies {
        let mut fault = SpecFault::new(spec.clone());
        let (t, events) = protected_forward(&model, &s.input, s.label, &plan, &chks, &eps, policy, &mut fault).unwrap();
        let (o, c) = fault.applied.unwrap();
        println!(
            "{:<16} {o} -> {c}: events {:?} class {} (clean {}) logits identical {}",
            policy.map_or("detect only".to_string(), |p| p.kind.to_string()),
            events.iter().map(|e| (e.layer, e.action.clone())).collect::<Vec<_>>(),
            t.predicted_class,
            clean.predicted_class,
            t.logits_bit_eq(&clean)
        );
    }
}

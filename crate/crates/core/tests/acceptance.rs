//! Acceptance gate: one line per criterion, non-zero exit on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gemmguard::analysis::{
    layer_vulnerabilities, plan_protection, rank_correlation, relative_costs, checksum_cost_model,
    duplication_cost_model, select_layers, select_layers_exhaustive, Scheme, ProtectionPlan,
};
use gemmguard::cli::{DatasetConfig, GuardConfig, ModelSource, Stage, Workbench, WorkbenchConfig};
use gemmguard::guard::{
    calibrate_epsilon, checksum_rows, clean_false_positives, evaluate_detection, offline_checksum, offline_checksums,
    protected_forward, verify_layer, CalibrationStatistic, CorrectionPolicy, EpsilonModel, GuardAction,
    WeightChecksum,
};
use gemmguard::injector::{
    margin_of_error, read_campaign_csv, run_campaign, write_campaign_csv, CampaignConfig, CampaignResult, Location,
    Mode, NoFault, SpecFault,
};
use gemmguard::model::{
    forward, Activation, Dataset, LayerKind, LayerSpec, ModelGraph, Sample, Tap, ToyConfig,
};
use gemmguard::numerics::{gemm, DType, Matrix, Precision};
use gemmguard::profiler::{profile_ranges, select_golden, GoldenSet, RangeProfile};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn run(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let out = f();
    let elapsed = t.elapsed();
    let (ok, detail) = match out {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over budget {budget:?}")),
        Err(e) => (false, e),
    };
    println!(
        "criterion {n:>2} {}: {name} [{:.2?} / {budget:?}] {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed
    );
    ok
}

fn all_layers(model: &ModelGraph) -> ProtectionPlan {
    ProtectionPlan::with_layers(Scheme::Checksum, 0..model.layers.len())
}

fn fixed_precision(model: &ModelGraph, p: Precision) -> BTreeMap<usize, Precision> {
    model
        .layers
        .iter()
        .map(|l| (l.index, if l.is_integer() { Precision::I64Exact } else { p }))
        .collect()
}

// 1

fn statistics() -> Outcome {
    let t = Instant::now();
    let e = margin_of_error(102_400, 0.9, 0.99).map_err(e2s)?;
    let dt = t.elapsed();
    check((0.00238..=0.00245).contains(&e), || format!("margin {e} outside [0.00238, 0.00245]"))?;
    check(dt < Duration::from_millis(1), || format!("took {dt:?}"))?;
    Ok(format!("margin={e:.6} in {dt:?}"))
}

// 2

fn flip_i32(v: f64, bit: u32) -> f64 {
    ((v as i32) ^ (1i32 << bit)) as f64
}

fn int8_soundness() -> Outcome {
    let model = ToyConfig::new(2, 64, 4, 10, 21).with_dtype(DType::I8).build().map_err(e2s)?;
    let data = Dataset::teacher_labeled(&model, 1000, 22).map_err(e2s)?;
    let golden = select_golden(&model, &data).map_err(e2s)?;
    let ranges = profile_ranges(&model, &data).map_err(e2s)?;
    let ps = fixed_precision(&model, Precision::I64Exact);
    let chks = offline_checksums(&model, &ps).map_err(e2s)?;
    let plan = all_layers(&model);

    // exhaustive single-bit flips over one layer's output
    let target = 1;
    let s = &data.samples[0];
    let trace = forward(&model, &s.input, s.label, &Tap::layer(target)).map_err(e2s)?;
    let tap = &trace.taps[&target];
    let mut exhaustive = 0usize;
    for e in 0..tap.output.len() {
        for bit in 0..32 {
            let mut y = tap.output.clone();
            y.set_flat(e, flip_i32(y.data()[e], bit)).map_err(e2s)?;
            let out = verify_layer(&tap.input, &y, &chks[&target], None).map_err(e2s)?;
            check(out.triggered, || format!("flip of element {e} bit {bit} not detected"))?;
            exhaustive += 1;
        }
    }

    // random flips across every layer and location
    let cfg = CampaignConfig::new(1000, 23)
        .with_modes(vec![Mode::IntBit])
        .with_locations(vec![Location::Output, Location::Input, Location::Weight]);
    let rep = evaluate_detection(&model, &data, &golden, &ranges, &cfg, &plan, &chks, &BTreeMap::new())
        .map_err(e2s)?;
    check(rep.points.len() == 10_000, || format!("{} random injections, {} skipped", rep.points.len(), rep.skipped.len()))?;
    let mut silent = 0;
    for p in &rep.points {
        // a weight flip whose column of X is all zero leaves every output unchanged
        let changed = p.max_shift != 0.0 || p.record.spec.location != Location::Weight;
        if !changed {
            silent += 1;
            continue;
        }
        check(p.fault_layer_triggered && p.record.detected == Some(true), || {
            format!("undetected int flip {:?}", p.record.spec)
        })?;
    }
    let clean = clean_false_positives(&model, &data.samples, &plan, &chks, &BTreeMap::new()).map_err(e2s)?;
    check(clean.inferences == 1000 && clean.flagged_rows == 0, || {
        format!("{} flagged rows in {} clean inferences", clean.flagged_rows, clean.inferences)
    })?;
    Ok(format!(
        "{exhaustive} exhaustive + {} random flips detected ({silent} weight flips with no output change), 0/{} clean rows flagged",
        rep.points.len() - silent,
        clean.checked_rows
    ))
}

// 3

fn checksum_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = 0usize;
    for case in 0..1000 {
        let (b, i, o) = (rng.random_range(1..=16), rng.random_range(1..=96), rng.random_range(1..=96));
        let x: Vec<f64> = (0..b * i).map(|_| rng.random_range(-128..=127) as f64).collect();
        let w: Vec<f64> = (0..i * o).map(|_| rng.random_range(-128..=127) as f64).collect();
        let bias: Vec<f64> = (0..o).map(|_| rng.random_range(-1_000_000..=1_000_000) as f64).collect();
        let x = Matrix::new(b, i, DType::I8, x).map_err(e2s)?;
        let wt = Matrix::new(i, o, DType::I8, w).map_err(e2s)?;
        let layer = LayerSpec {
            index: 0,
            name: format!("case{case}"),
            kind: LayerKind::AttnProj,
            in_dim: i,
            out_dim: o,
            tokens: b,
            weight: wt.clone(),
            bias: bias.clone(),
            activation: Activation::None,
            normalize_before: false,
            quant: None,
        };
        let y = gemm(&x, &wt, Some(&bias), Precision::I64Exact).map_err(e2s)?;
        let chk = offline_checksum(&layer, Precision::I64Exact).map_err(e2s)?;
        for (r, (pred, obs)) in checksum_rows(&x, &y, &chk).map_err(e2s)?.into_iter().enumerate() {
            // independent i128 recount
            let mut want_pred: i128 = bias.iter().map(|v| *v as i128).sum();
            let mut want_obs: i128 = 0;
            for k in 0..i {
                let xk = x.get(r, k) as i128;
                for c in 0..o {
                    want_pred += xk * wt.get(k, c) as i128;
                }
            }
            for c in 0..o {
                want_obs += y.get(r, c) as i128;
            }
            check(pred == obs, || format!("case {case} row {r}: predicted {pred} != observed {obs}"))?;
            check(pred as i128 == want_pred && obs as i128 == want_obs, || {
                format!("case {case} row {r}: disagrees with the i128 recount")
            })?;
            rows += 1;
        }
    }
    Ok(format!("1000 instances, {rows} rows bit-exact"))
}

// shared float fixture

struct Calibrated {
    model: ModelGraph,
    data: Dataset,
    golden: GoldenSet,
    ranges: RangeProfile,
    chks: BTreeMap<usize, WeightChecksum>,
    eps: BTreeMap<usize, EpsilonModel>,
}

fn calibrated(cfg: ToyConfig, n_cal: usize, n_hold: usize, confidence: f64) -> Result<Calibrated, String> {
    let model = cfg.build().map_err(e2s)?;
    let data = Dataset::teacher_labeled(&model, (n_cal + n_hold) as u64, cfg.seed ^ 0xda7a).map_err(e2s)?;
    let golden = select_golden(&model, &data).map_err(e2s)?;
    check(golden.len() >= n_cal + n_hold, || format!("only {} golden samples", golden.len()))?;
    let ranges = profile_ranges(&model, &data).map_err(e2s)?;
    let chks = offline_checksums(&model, &fixed_precision(&model, Precision::F64)).map_err(e2s)?;
    let eps = calibrate_epsilon(&model, &data, &golden.take(n_cal), &chks, confidence, CalibrationStatistic::PerSample)
        .map_err(e2s)?;
    Ok(Calibrated { model, data, golden, ranges, chks, eps })
}

// 4

fn replay_exactness() -> Outcome {
    let c = calibrated(ToyConfig::new(2, 32, 4, 10, 41).with_dtype(DType::F16), 500, 500, 0.9999)?;
    let plan = all_layers(&c.model);
    let policy = Some(CorrectionPolicy::replay(3));
    let held = c.golden.skip(500);
    let samples: Vec<(&_, &Sample)> = held.samples(&c.data).map_err(e2s)?;
    for (_, s) in &samples {
        let clean = forward(&c.model, &s.input, s.label, &Tap::None).map_err(e2s)?;
        let (t, _) = protected_forward(&c.model, &s.input, s.label, &plan, &c.chks, &c.eps, policy, &mut NoFault)
            .map_err(e2s)?;
        check(t.logits_bit_eq(&clean), || format!("clean protected pass of sample {} differs", s.id))?;
    }
    let cfg = CampaignConfig::new(150, 42).with_modes(vec![Mode::FpExponentBit, Mode::FpSignBit]);
    let rep = evaluate_detection(&c.model, &c.data, &c.golden, &c.ranges, &cfg, &plan, &c.chks, &c.eps)
        .map_err(e2s)?;
    let detected: Vec<_> = rep.points.iter().filter(|p| p.record.detected == Some(true)).take(500).collect();
    check(detected.len() == 500, || format!("only {} detected injections", detected.len()))?;
    let mut replays = 0;
    for p in &detected {
        let s = c.data.get(p.record.spec.sample_id).unwrap();
        let golden = forward(&c.model, &s.input, s.label, &Tap::None).map_err(e2s)?;
        let mut fault = SpecFault::new(p.record.spec.clone());
        let (t, events) =
            protected_forward(&c.model, &s.input, s.label, &plan, &c.chks, &c.eps, policy, &mut fault)
                .map_err(e2s)?;
        replays += events.iter().filter(|e| matches!(e.action, GuardAction::Replayed { .. })).count();
        check(t.logits_bit_eq(&golden), || format!("replayed logits differ for {:?}", p.record.spec))?;
    }
    Ok(format!("{} clean passes identical; 500/500 detected injections restored ({replays} replays)", samples.len()))
}

// 5 and 6 share the calibrated binary16 model

fn fp_calibration(c: &Calibrated) -> Outcome {
    let plan = all_layers(&c.model);
    let held = c.golden.skip(5000);
    let held: Vec<&Sample> = held.samples(&c.data).map_err(e2s)?.into_iter().map(|(_, s)| s).collect();
    check(held.len() == 5000, || format!("{} held-out samples", held.len()))?;
    let st = clean_false_positives(&c.model, held, &plan, &c.chks, &c.eps).map_err(e2s)?;
    let rate = st.row_rate();
    check(rate <= 1e-3, || format!("false-positive rate {rate:.2e} per verified row"))?;
    Ok(format!(
        "{}/{} verified rows flagged ({:.3e}); {}/{} inferences with any flag ({:.3e})",
        st.flagged_rows,
        st.checked_rows,
        rate,
        st.flagged_inferences,
        st.inferences,
        st.inference_rate()
    ))
}

fn fp_coverage(c: &Calibrated) -> Outcome {
    let plan = all_layers(&c.model);
    let n = 10_000usize.div_ceil(c.model.layers.len());
    let cfg = CampaignConfig::new(n, 61);
    let rep = evaluate_detection(&c.model, &c.data, &c.golden, &c.ranges, &cfg, &plan, &c.chks, &c.eps)
        .map_err(e2s)?;
    check(rep.points.len() >= 10_000, || format!("{} injections", rep.points.len()))?;
    let t = rep.total();
    for p in &rep.points {
        check(!p.guaranteed || p.fault_layer_triggered, || {
            format!("shift past threshold + rounding bound not flagged: {:?}", p.record.spec)
        })?;
        check(!p.width_guaranteed || p.record.detected == Some(true), || {
            format!("shift beyond threshold width + rounding bound missed: {:?}", p.record.spec)
        })?;
    }
    let cov = t.coverage().ok_or("no mismatching injection")?;
    check(cov > 0.95, || {
        format!(
            "mismatch coverage {cov:.4} ({}/{}) not above 0.95; {} past the tight bound and {} past the width bound all detected",
            t.detected_mismatches, t.mismatches, t.guaranteed, t.width_guaranteed
        )
    })?;
    Ok(format!(
        "{} injections; {} past the tight bound and {} past the width bound all detected; mismatch coverage {}/{} = {:.4}",
        t.injections, t.guaranteed, t.width_guaranteed, t.detected_mismatches, t.mismatches, cov
    ))
}

// 7

fn selection_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let n = rng.random_range(1..=15);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let cost = rng.random_range(0.001..0.1);
        let costs = vec![cost; n];
        let target = rng.random_range(0.05..=1.0);
        let g = select_layers(&v, &costs, target, None).map_err(e2s)?;
        let x = select_layers_exhaustive(&v, &costs, target, None).map_err(e2s)?;
        check((g.cost - x.cost).abs() <= 1e-12, || {
            format!("case {case}: greedy {} vs optimal {}", g.cost, x.cost)
        })?;
    }
    // crafted instances where ratio order is misleading
    let crafted: Vec<(Vec<f64>, Vec<f64>, f64)> = vec![
        (vec![0.51, 0.49, 0.49], vec![0.5, 0.5, 0.48], 0.98),
        (vec![0.3, 0.3, 0.4], vec![0.29, 0.29, 0.4], 0.7),
        (vec![0.1, 0.45, 0.45], vec![0.05, 0.3, 0.3], 0.9),
        (vec![0.2, 0.2, 0.2, 0.4], vec![0.1, 0.1, 0.1, 0.25], 0.8),
        (vec![0.34, 0.33, 0.33], vec![0.2, 0.3, 0.31], 0.66),
    ];
    let mut worst = 1.0f64;
    let mut gaps = Vec::new();
    for (v, c, t) in &crafted {
        let g = select_layers(v, c, *t, None).map_err(e2s)?;
        let x = select_layers_exhaustive(v, c, *t, None).map_err(e2s)?;
        let ratio = g.cost / x.cost;
        worst = worst.max(ratio);
        gaps.push(format!("{ratio:.3}"));
    }
    check(worst <= 1.5, || format!("crafted cost ratios {gaps:?}"))?;
    let mut rand_worst = 1.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..0.1)).collect();
        let t = rng.random_range(0.05..=1.0);
        let g = select_layers(&v, &c, t, None).map_err(e2s)?;
        let x = select_layers_exhaustive(&v, &c, t, None).map_err(e2s)?;
        rand_worst = rand_worst.max(g.cost / x.cost);
    }
    Ok(format!(
        "1000 equal-cost instances optimal; crafted ratios {gaps:?}; worst general random ratio {rand_worst:.3}"
    ))
}

// 8

struct CostFixture {
    model: ModelGraph,
    vulns: Vec<gemmguard::analysis::LayerVulnerability>,
}

fn cost_fixture() -> Result<CostFixture, String> {
    let model = ToyConfig::new(2, 256, 4, 10, 81).build().map_err(e2s)?;
    let data = Dataset::teacher_labeled(&model, 40, 82).map_err(e2s)?;
    let golden = select_golden(&model, &data).map_err(e2s)?;
    let ranges = profile_ranges(&model, &data).map_err(e2s)?;
    let campaign = run_campaign(&model, &data, &golden, &ranges, &CampaignConfig::new(20, 83)).map_err(e2s)?;
    let vulns = layer_vulnerabilities(&model, &campaign).map_err(e2s)?;
    Ok(CostFixture { model, vulns })
}

fn cost_ratio(f: &CostFixture) -> Outcome {
    let mut min_ratio = f64::INFINITY;
    let mut big = 0;
    for l in &f.model.layers {
        if l.in_dim < 256 || l.out_dim < 256 {
            continue;
        }
        big += 1;
        let ratio = duplication_cost_model(l).compute_flops / checksum_cost_model(l).compute_flops;
        check(ratio > 100.0, || format!("layer {} ratio {ratio:.1}", l.name))?;
        min_ratio = min_ratio.min(ratio);
    }
    check(big > 0, || "no layer with dims >= 256".into())?;
    let plan = plan_protection(&f.model, &f.vulns, Scheme::Checksum, 0.99, true).map_err(e2s)?;
    let all: f64 = relative_costs(&f.model, Scheme::Checksum).iter().sum();
    check(plan.compute_overhead < 0.005, || format!("planned overhead {:.4}%", plan.compute_overhead * 100.0))?;
    Ok(format!(
        "{big} layers, min duplication/checksum ratio {min_ratio:.0}x; 99% plan overhead {:.4}% ({} layers), all layers {:.4}%",
        plan.compute_overhead * 100.0,
        plan.selected.len(),
        all * 100.0
    ))
}

// 9

fn metric_coherence() -> Outcome {
    let model = ToyConfig::new(2, 32, 4, 10, 91).build().map_err(e2s)?;
    let data = Dataset::teacher_labeled(&model, 300, 92).map_err(e2s)?;
    let golden = select_golden(&model, &data).map_err(e2s)?;
    let ranges = profile_ranges(&model, &data).map_err(e2s)?;
    let cfg = CampaignConfig::new(200, 93).with_modes(vec![Mode::FpExponentBit, Mode::FpMantissaBit, Mode::FpSignBit]);
    let campaign = run_campaign(&model, &data, &golden, &ranges, &cfg).map_err(e2s)?;
    let mut buf = Vec::new();
    write_campaign_csv(&mut buf, &campaign.records, Some("criterion 9")).map_err(e2s)?;

    // brute-force recount straight from the serialized text
    let text = String::from_utf8(buf.clone()).map_err(e2s)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("no column {name}"));
    let (cl, cm, cg, cc) = (col("layer")?, col("mismatch")?, col("golden_loss")?, col("corrupt_loss")?);
    let n = model.layers.len();
    let mut counts = vec![(0u64, 0u64, 0.0f64); n];
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let l: usize = f[cl].parse().map_err(e2s)?;
        counts[l].0 += 1;
        counts[l].1 += (f[cm] == "true") as u64;
        counts[l].2 += f[cc].parse::<f64>().map_err(e2s)? - f[cg].parse::<f64>().map_err(e2s)?;
    }
    let recount_p: Vec<f64> = counts.iter().map(|c| c.1 as f64 / c.0 as f64).collect();
    let recount_dl: Vec<f64> = counts.iter().map(|c| c.2 / c.0 as f64).collect();

    let records = read_campaign_csv(buf.as_slice()).map_err(e2s)?;
    let reread = CampaignResult { records, ..campaign };
    let vulns = layer_vulnerabilities(&model, &reread).map_err(e2s)?;
    let p: Vec<f64> = vulns.iter().map(|v| v.p_prop).collect();
    let dl: Vec<f64> = vulns.iter().map(|v| v.delta_loss).collect();
    check(p == recount_p, || format!("p_prop {p:?} != recount {recount_p:?}"))?;
    let rho = rank_correlation(&p, &recount_p);
    check(rho == 1.0, || format!("rank correlation {rho}"))?;
    let rho_dl = rank_correlation(&dl, &recount_dl);
    let rho_cross = rank_correlation(&p, &dl);
    Ok(format!(
        "p_prop rank correlation {rho}; delta_loss vs recount {rho_dl:.4}; p_prop vs delta_loss {rho_cross:.4}"
    ))
}

// 10

fn pipeline_config() -> WorkbenchConfig {
    WorkbenchConfig {
        model: ModelSource::Synthetic(ToyConfig::new(2, 32, 4, 10, 101).with_dtype(DType::F16)),
        dataset: DatasetConfig { size: 400, seed: 102 },
        campaign: CampaignConfig::new(100, 103),
        guard: GuardConfig { calibration_samples: 200, ..Default::default() },
        correction: Some(CorrectionPolicy::replay(3)),
        out: None,
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map_err(e2s)?
        .map(|e| {
            let e = e.map_err(e2s)?;
            Ok((e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).map_err(e2s)?))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(e2s)?, tempfile::tempdir().map_err(e2s)?];
    let mut first = Duration::ZERO;
    for (i, d) in dirs.iter().enumerate() {
        let t = Instant::now();
        Workbench::new(pipeline_config(), d.path().into()).map_err(e2s)?.run(Stage::All).map_err(e2s)?;
        if i == 0 {
            first = t.elapsed();
        }
    }
    let (a, b) = (read_dir_sorted(dirs[0].path())?, read_dir_sorted(dirs[1].path())?);
    check(a.len() >= 12, || format!("only {} artifacts", a.len()))?;
    check(a == b, || {
        let names: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
        format!("artifacts differ: {names:?}")
    })?;
    let hash = pipeline_config().hash();
    for (name, bytes) in &a {
        if name.ends_with(".json") || name.ends_with(".csv") {
            let text = String::from_utf8_lossy(bytes);
            check(text.contains(&hash), || format!("{name} does not embed the config hash"))?;
        }
    }
    Ok(format!("{} artifacts byte-identical across two runs (single run {first:.2?})", a.len()))
}

fn main() {
    let mut ok = true;
    ok &= run(1, "statistics reproduction", Duration::from_secs(1), statistics);
    ok &= run(2, "exact-integer checksum soundness", Duration::from_secs(120), int8_soundness);
    ok &= run(3, "checksum algebra identity", Duration::from_secs(10), checksum_identity);
    ok &= run(4, "clean-path identity and replay exactness", Duration::from_secs(120), replay_exactness);

    let t = Instant::now();
    let fixture = calibrated(ToyConfig::new(4, 128, 4, 10, 51).with_dtype(DType::F16), 5000, 5000, 0.9999);
    let setup = t.elapsed();
    match &fixture {
        Ok(c) => {
            ok &= run(5, "false-positive calibration contract", Duration::from_secs(300).saturating_sub(setup), || {
                fp_calibration(c)
            });
            ok &= run(6, "detection coverage property", Duration::from_secs(600), || fp_coverage(c));
        }
        Err(e) => {
            println!("criterion  5 FAIL: false-positive calibration contract: {e}");
            println!("criterion  6 FAIL: detection coverage property: {e}");
            ok = false;
        }
    }

    ok &= run(7, "selection optimality", Duration::from_secs(60), selection_optimality);
    match cost_fixture() {
        Ok(f) => ok &= run(8, "cost-model ratio", Duration::from_secs(1), || cost_ratio(&f)),
        Err(e) => {
            println!("criterion  8 FAIL: cost-model ratio: {e}");
            ok = false;
        }
    }
    ok &= run(9, "metric coherence", Duration::from_secs(300), metric_coherence);
    ok &= run(10, "determinism", Duration::from_secs(600), determinism);
    if !ok {
        std::process::exit(1);
    }
}

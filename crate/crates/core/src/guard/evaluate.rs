use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EpsilonModel, FaultProbe, ProtectedExecutor, WeightChecksum};
use crate::analysis::ProtectionPlan;
use crate::error::{Error, Result};
use crate::injector::{run_campaign_with, CampaignConfig, InjectionRecord, NoFault, SkippedInjection, SpecFault};
use crate::model::{run_graph, Dataset, ModelGraph, Sample, Tap};
use crate::profiler::{GoldenSet, RangeProfile};

/// One injection under a detect-only guard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPoint {
    pub record: InjectionRecord,
    /// The faulted layer itself flagged the corruption.
    pub fault_layer_triggered: bool,
    /// Some row's shift crosses the threshold even under worst-case rounding.
    pub guaranteed: bool,
    /// Some row's shift exceeds the full interval width plus the rounding bound.
    pub width_guaranteed: bool,
    /// Largest `|Σ_o ΔY|` over the rows of the faulted layer.
    pub max_shift: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionTally {
    pub injections: usize,
    pub mismatches: usize,
    pub detected_mismatches: usize,
    pub missed_mismatches: usize,
    pub detected_benign: usize,
    pub quiet_benign: usize,
    pub guaranteed: usize,
    pub guaranteed_triggered: usize,
    pub width_guaranteed: usize,
}

impl DetectionTally {
    fn add(&mut self, p: &DetectionPoint) {
        let detected = p.record.detected == Some(true);
        self.injections += 1;
        match (p.record.mismatch, detected) {
            (true, true) => self.detected_mismatches += 1,
            (true, false) => self.missed_mismatches += 1,
            (false, true) => self.detected_benign += 1,
            (false, false) => self.quiet_benign += 1,
        }
        self.mismatches += p.record.mismatch as usize;
        self.guaranteed += p.guaranteed as usize;
        self.guaranteed_triggered += (p.guaranteed && p.fault_layer_triggered) as usize;
        self.width_guaranteed += p.width_guaranteed as usize;
    }

    /// Fraction of mismatching injections that were detected; `None` without
    /// any mismatch.
    pub fn coverage(&self) -> Option<f64> {
        (self.mismatches > 0).then(|| self.detected_mismatches as f64 / self.mismatches as f64)
    }

    pub fn detection_rate(&self) -> Option<f64> {
        (self.injections > 0)
            .then(|| (self.detected_mismatches + self.detected_benign) as f64 / self.injections as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub points: Vec<DetectionPoint>,
    pub skipped: Vec<SkippedInjection>,
}

impl DetectionReport {
    pub fn per_layer(&self) -> BTreeMap<usize, DetectionTally> {
        let mut out: BTreeMap<usize, DetectionTally> = BTreeMap::new();
        for p in &self.points {
            out.entry(p.record.spec.layer_index).or_default().add(p);
        }
        out
    }

    pub fn total(&self) -> DetectionTally {
        let mut t = DetectionTally::default();
        for p in &self.points {
            t.add(p);
        }
        t
    }

    pub fn records(&self) -> Vec<InjectionRecord> {
        self.points.iter().map(|p| p.record.clone()).collect()
    }
}

fn summarize_probe(probe: Option<&FaultProbe>) -> (bool, bool, bool, f64) {
    let Some(p) = probe else { return (false, false, false, 0.0) };
    let width = p.threshold_high - p.threshold_low;
    let width_guaranteed = p
        .rows
        .iter()
        .any(|r| !r.shift.is_finite() || r.shift.abs() > width + r.rounding_bound);
    let max_shift = p.rows.iter().map(|r| r.shift.abs()).fold(0.0, f64::max);
    (p.triggered, p.guaranteed(), width_guaranteed, max_shift)
}

/// Runs a fault-injection campaign with the plan's layers verified in
/// detect-only mode. Sampling is identical to an unprotected campaign with the
/// same configuration.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_detection(
    model: &ModelGraph,
    dataset: &Dataset,
    golden: &GoldenSet,
    ranges: &RangeProfile,
    config: &CampaignConfig,
    plan: &ProtectionPlan,
    checksums: &BTreeMap<usize, WeightChecksum>,
    eps: &BTreeMap<usize, EpsilonModel>,
) -> Result<DetectionReport> {
    ProtectedExecutor::new(model, plan, checksums, eps, None, &mut NoFault)?;
    let probes: Mutex<HashMap<String, Option<FaultProbe>>> = Mutex::new(HashMap::new());
    let campaign = run_campaign_with(model, dataset, golden, ranges, config, &|sample, member, spec| {
        let mut fault = SpecFault::new(spec.clone());
        let mut exec = ProtectedExecutor::new(model, plan, checksums, eps, None, &mut fault)?.with_probe();
        let trace = run_graph(model, &sample.input, member.label, &Tap::None, &mut exec)?
            .ok_or_else(|| Error::InvalidArgument("detect-only pass stopped early".into()))?;
        let detected = exec.detected();
        let detection_layer = exec.first_detection();
        let probe = exec.probes.into_iter().find(|p| p.layer == spec.layer_index);
        let (original_value, corrupted_value) = fault
            .applied
            .ok_or_else(|| Error::InvalidArgument(format!("layer {} never executed", spec.layer_index)))?;
        probes.lock().unwrap().insert(format!("{spec:?}"), probe);
        Ok(InjectionRecord {
            spec: spec.clone(),
            original_value,
            corrupted_value,
            golden_loss: member.golden_loss,
            corrupted_loss: trace.loss,
            golden_class: member.label,
            corrupted_class: trace.predicted_class,
            mismatch: trace.predicted_class != member.label,
            detected: Some(detected),
            detection_layer,
        })
    })?;
    let probes = probes.into_inner().unwrap();
    let points = campaign
        .records
        .into_iter()
        .map(|record| {
            let (fault_layer_triggered, guaranteed, width_guaranteed, max_shift) =
                summarize_probe(probes.get(&format!("{:?}", record.spec)).and_then(Option::as_ref));
            DetectionPoint { record, fault_layer_triggered, guaranteed, width_guaranteed, max_shift }
        })
        .collect();
    Ok(DetectionReport { points, skipped: campaign.skipped })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanPassStats {
    pub inferences: u64,
    pub flagged_inferences: u64,
    pub checked_rows: u64,
    pub flagged_rows: u64,
    /// `(checked, flagged)` rows per protected layer.
    pub per_layer: BTreeMap<usize, (u64, u64)>,
}

impl CleanPassStats {
    /// False positives per verified row.
    pub fn row_rate(&self) -> f64 {
        if self.checked_rows == 0 {
            0.0
        } else {
            self.flagged_rows as f64 / self.checked_rows as f64
        }
    }

    /// Inferences with at least one flagged row.
    pub fn inference_rate(&self) -> f64 {
        if self.inferences == 0 {
            0.0
        } else {
            self.flagged_inferences as f64 / self.inferences as f64
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.inferences += other.inferences;
        self.flagged_inferences += other.flagged_inferences;
        self.checked_rows += other.checked_rows;
        self.flagged_rows += other.flagged_rows;
        for (l, (c, f)) in other.per_layer {
            let e = self.per_layer.entry(l).or_default();
            e.0 += c;
            e.1 += f;
        }
        self
    }
}

/// Fault-free inferences under a detect-only guard.
pub fn clean_false_positives<'s>(
    model: &ModelGraph,
    samples: impl IntoIterator<Item = &'s Sample>,
    plan: &ProtectionPlan,
    checksums: &BTreeMap<usize, WeightChecksum>,
    eps: &BTreeMap<usize, EpsilonModel>,
) -> Result<CleanPassStats> {
    let samples: Vec<&Sample> = samples.into_iter().collect();
    samples
        .par_iter()
        .map(|s| {
            let mut fault = NoFault;
            let mut exec = ProtectedExecutor::new(model, plan, checksums, eps, None, &mut fault)?;
            run_graph(model, &s.input, s.label, &Tap::None, &mut exec)?;
            let mut st = CleanPassStats { inferences: 1, ..Default::default() };
            for (&l, &c) in &exec.checked_rows {
                st.checked_rows += c;
                st.per_layer.entry(l).or_default().0 += c;
            }
            for e in &exec.events {
                let f = e.flagged_rows.len() as u64;
                st.flagged_rows += f;
                st.per_layer.entry(e.layer).or_default().1 += f;
            }
            st.flagged_inferences = exec.detected() as u64;
            Ok(st)
        })
        .try_reduce(CleanPassStats::default, |a, b| Ok(a.merge(b)))
}

#[derive(Serialize)]
struct DetectionRow {
    layer: usize,
    location: String,
    element: usize,
    bit: Option<u32>,
    mode: String,
    sample: u64,
    mismatch: bool,
    detected: Option<bool>,
    detection_layer: Option<usize>,
    fault_layer_triggered: bool,
    guaranteed: bool,
    width_guaranteed: bool,
    max_shift: f64,
}

pub fn write_detection_csv<W: Write>(mut w: W, points: &[DetectionPoint], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    for p in points {
        let s = &p.record.spec;
        csv.serialize(DetectionRow {
            layer: s.layer_index,
            location: s.location.to_string(),
            element: s.element,
            bit: s.bit_index,
            mode: s.mode.to_string(),
            sample: s.sample_id,
            mismatch: p.record.mismatch,
            detected: p.record.detected,
            detection_layer: p.record.detection_layer,
            fault_layer_triggered: p.fault_layer_triggered,
            guaranteed: p.guaranteed,
            width_guaranteed: p.width_guaranteed,
            max_shift: p.max_shift,
        })?;
    }
    csv.flush()?;
    Ok(())
}

/// One row per calibrated layer.
pub fn write_threshold_csv<W: Write>(mut w: W, eps: &BTreeMap<usize, EpsilonModel>, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["layer", "mu", "sigma", "confidence", "low", "high", "n", "precision", "exact"])?;
    for e in eps.values() {
        csv.write_record([
            e.layer_index.to_string(),
            e.mu.to_string(),
            e.sigma.to_string(),
            e.confidence.to_string(),
            e.threshold_low.to_string(),
            e.threshold_high.to_string(),
            e.n_samples.to_string(),
            e.precision.to_string(),
            e.exact.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

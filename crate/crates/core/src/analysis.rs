//! Layer vulnerability metrics, protection cost models and coverage-targeted
//! layer selection.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::injector::CampaignResult;
use crate::model::{LayerSpec, ModelGraph};

/// Largest instance the exhaustive selector accepts.
pub const EXHAUSTIVE_MAX_LAYERS: usize = 20;

const COVERAGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerVulnerability {
    pub layer_index: usize,
    pub v_orig: f64,
    pub p_prop: f64,
    pub delta_loss: f64,
    pub v_layer: f64,
    pub injections: usize,
    pub mismatches: usize,
}

/// MAC share of every layer.
pub fn compute_v_orig(model: &ModelGraph) -> Vec<f64> {
    v_orig_from_macs(&model.layers.iter().map(LayerSpec::mac_count).collect::<Vec<_>>())
}

pub fn v_orig_from_macs(macs: &[u64]) -> Vec<f64> {
    let total: u64 = macs.iter().sum();
    macs.iter().map(|m| *m as f64 / total as f64).collect()
}

/// Fraction of a layer's injections that changed the predicted class.
pub fn compute_p_prop(campaign: &CampaignResult, layer: usize) -> Result<f64> {
    let (n, hits) = campaign
        .layer_records(layer)
        .fold((0usize, 0usize), |(n, h), r| (n + 1, h + r.mismatch as usize));
    if n == 0 {
        return Err(Error::NoRecords { layer });
    }
    Ok(hits as f64 / n as f64)
}

/// Mean loss increase `corrupted − golden` over a layer's injections.
pub fn compute_delta_loss(campaign: &CampaignResult, layer: usize) -> Result<f64> {
    let (n, sum) = campaign
        .layer_records(layer)
        .fold((0usize, 0.0f64), |(n, s), r| (n + 1, s + (r.corrupted_loss - r.golden_loss)));
    if n == 0 {
        return Err(Error::NoRecords { layer });
    }
    Ok(sum / n as f64)
}

/// Vulnerability table for every layer of `model`.
pub fn layer_vulnerabilities(model: &ModelGraph, campaign: &CampaignResult) -> Result<Vec<LayerVulnerability>> {
    let v_orig = compute_v_orig(model);
    model
        .layers
        .iter()
        .map(|l| {
            let i = l.index;
            let p_prop = compute_p_prop(campaign, i)?;
            let recs = campaign.layer_records(i);
            let (injections, mismatches) = recs.fold((0, 0), |(n, m), r| (n + 1, m + r.mismatch as usize));
            Ok(LayerVulnerability {
                layer_index: i,
                v_orig: v_orig[i],
                p_prop,
                delta_loss: compute_delta_loss(campaign, i)?,
                v_layer: v_orig[i] * p_prop,
                injections,
                mismatches,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Duplication,
    Checksum,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Duplication => "duplication",
            Scheme::Checksum => "checksum",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duplication" => Ok(Scheme::Duplication),
            "checksum" => Ok(Scheme::Checksum),
            _ => Err(Error::InvalidArgument(format!("unknown protection scheme `{s}`"))),
        }
    }
}

/// Per-inference cost of protecting one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    /// Floating-point operations (a multiply-accumulate counts as two).
    pub compute_flops: f64,
    /// Extra elements held in memory.
    pub memory_elems: f64,
}

/// Checksum cost of a layer: reduce the input rows (`tokens·in` adds),
/// reduce the output rows (`tokens·out` adds) and dot each input row
/// checksum with the stored weight checksum (`tokens·in` multiplies).
/// Memory is the offline weight checksum plus the two online row vectors.
pub fn checksum_cost_model(layer: &LayerSpec) -> LayerCost {
    let (t, i, o) = (layer.tokens as f64, layer.in_dim as f64, layer.out_dim as f64);
    LayerCost { compute_flops: t * (2.0 * i + o), memory_elems: i + 2.0 * t }
}

/// Duplication cost: the GEMM again, with a second copy of the weights and
/// of the output activation.
pub fn duplication_cost_model(layer: &LayerSpec) -> LayerCost {
    let (t, i, o) = (layer.tokens as f64, layer.in_dim as f64, layer.out_dim as f64);
    LayerCost { compute_flops: 2.0 * layer.mac_count() as f64, memory_elems: i * o + t * o }
}

pub fn cost_model(layer: &LayerSpec, scheme: Scheme) -> LayerCost {
    match scheme {
        Scheme::Duplication => duplication_cost_model(layer),
        Scheme::Checksum => checksum_cost_model(layer),
    }
}

/// Flops of one unprotected inference.
pub fn model_flops(model: &ModelGraph) -> f64 {
    2.0 * model.total_macs() as f64
}

/// Per-layer compute overhead of `scheme` as a fraction of model flops.
pub fn relative_costs(model: &ModelGraph, scheme: Scheme) -> Vec<f64> {
    let total = model_flops(model);
    model.layers.iter().map(|l| cost_model(l, scheme).compute_flops / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Layer added at this point (`None` for the origin).
    pub layer: Option<usize>,
    pub overhead: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub points: Vec<CurvePoint>,
}

/// Ratio order used by the curve and the greedy selector: value per cost
/// descending, then cheaper first, then lower index.
fn ratio_order(vulns: &[f64], costs: &[f64], candidates: impl Iterator<Item = usize>) -> Vec<usize> {
    let ratio = |i: usize| {
        if costs[i] > 0.0 {
            vulns[i] / costs[i]
        } else if vulns[i] > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let mut order: Vec<usize> = candidates.collect();
    order.sort_by(|&a, &b| {
        ratio(b)
            .partial_cmp(&ratio(a))
            .unwrap_or(Ordering::Equal)
            .then(costs[a].partial_cmp(&costs[b]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    order
}

fn check_inputs(vulns: &[f64], costs: &[f64]) -> Result<()> {
    if vulns.len() != costs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vulnerabilities but {} costs",
            vulns.len(),
            costs.len()
        )));
    }
    if let Some(i) = costs.iter().position(|c| c.is_nan() || *c < 0.0) {
        return Err(Error::NegativeCost { layer: i });
    }
    if let Some(i) = vulns.iter().position(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!("vulnerability of layer {i} is negative")));
    }
    Ok(())
}

/// Cumulative (overhead, coverage) as layers are added in ratio order.
/// Coverage is normalized by the total vulnerability of the given layers.
pub fn build_coverage_curve(vulns: &[f64], costs: &[f64]) -> Result<CoverageCurve> {
    check_inputs(vulns, costs)?;
    let total: f64 = vulns.iter().sum();
    let mut points = vec![CurvePoint { layer: None, overhead: 0.0, coverage: 0.0 }];
    let (mut c, mut v) = (0.0, 0.0);
    for i in ratio_order(vulns, costs, 0..vulns.len()) {
        c += costs[i];
        v += vulns[i];
        let coverage = if total > 0.0 { (v / total).min(1.0) } else { 1.0 };
        points.push(CurvePoint { layer: Some(i), overhead: c, coverage });
    }
    if let Some(last) = points.last_mut().filter(|p| p.layer.is_some()) {
        last.coverage = 1.0;
    }
    Ok(CoverageCurve { points })
}

/// A selected layer set and its coverage and summed cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub layers: BTreeSet<usize>,
    pub coverage: f64,
    pub cost: f64,
}

impl Selection {
    fn of(layers: BTreeSet<usize>, vulns: &[f64], costs: &[f64], total: f64) -> Self {
        let v: f64 = layers.iter().map(|i| vulns[*i]).sum();
        let cost = layers.iter().map(|i| costs[*i]).sum();
        Self { coverage: if total > 0.0 { v / total } else { 1.0 }, cost, layers }
    }
}

fn check_target(target: f64) -> Result<()> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidArgument(format!("target coverage {target} outside (0, 1]")));
    }
    Ok(())
}

/// Greedy coverage-targeted selection.
///
/// Layers are taken in ratio order until the target is met. At the crossing
/// point the cheapest single remaining layer that completes the target from
/// the shorter prefix is considered as an alternative, and finally any
/// non-forced layer whose removal keeps the target is dropped (most expensive
/// first).
pub fn select_layers(vulns: &[f64], costs: &[f64], target: f64, forced: Option<usize>) -> Result<Selection> {
    check_inputs(vulns, costs)?;
    check_target(target)?;
    let total: f64 = vulns.iter().sum();
    let need = |v: f64| total <= 0.0 || v / total >= target - COVERAGE_TOL;
    let reachable = if total > 0.0 { 1.0 } else { 0.0 };
    if total <= 0.0 && vulns.is_empty() {
        return Err(Error::TargetUnreachable { target, reachable });
    }
    if let Some(f) = forced {
        if f >= vulns.len() {
            return Err(Error::IndexOutOfRange(format!("forced layer {f}")));
        }
    }
    let base: BTreeSet<usize> = forced.into_iter().collect();
    let base_v: f64 = base.iter().map(|i| vulns[*i]).sum();
    let order = ratio_order(vulns, costs, (0..vulns.len()).filter(|i| Some(*i) != forced));

    let mut chosen = base.clone();
    let mut v = base_v;
    let mut crossing = None;
    if !need(v) {
        for (pos, &i) in order.iter().enumerate() {
            chosen.insert(i);
            v += vulns[i];
            if need(v) {
                crossing = Some(pos);
                break;
            }
        }
        if crossing.is_none() {
            return Err(Error::TargetUnreachable { target, reachable: v / total });
        }
    }
    let mut best = Selection::of(chosen, vulns, costs, total);

    if let Some(k) = crossing {
        let prefix: BTreeSet<usize> = base.iter().copied().chain(order[..k].iter().copied()).collect();
        let prefix_v: f64 = prefix.iter().map(|i| vulns[*i]).sum();
        let completion = order[k..]
            .iter()
            .copied()
            .filter(|&i| need(prefix_v + vulns[i]))
            .min_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        if let Some(c) = completion {
            let mut alt = prefix;
            alt.insert(c);
            let alt = Selection::of(alt, vulns, costs, total);
            if alt.cost < best.cost {
                best = alt;
            }
        }
    }

    let mut removable: Vec<usize> = best.layers.iter().copied().filter(|i| Some(*i) != forced).collect();
    removable.sort_by(|&a, &b| costs[b].partial_cmp(&costs[a]).unwrap_or(Ordering::Equal).then(b.cmp(&a)));
    let mut layers = best.layers.clone();
    let mut v: f64 = layers.iter().map(|i| vulns[*i]).sum();
    for i in removable {
        if need(v - vulns[i]) {
            layers.remove(&i);
            v -= vulns[i];
        }
    }
    Ok(Selection::of(layers, vulns, costs, total))
}

/// Minimum-cost subset reaching `target`, by enumeration. Ties prefer higher
/// coverage, then the lexicographically smallest mask.
pub fn select_layers_exhaustive(vulns: &[f64], costs: &[f64], target: f64, forced: Option<usize>) -> Result<Selection> {
    check_inputs(vulns, costs)?;
    check_target(target)?;
    let n = vulns.len();
    if n > EXHAUSTIVE_MAX_LAYERS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive selection limited to {EXHAUSTIVE_MAX_LAYERS} layers, got {n}"
        )));
    }
    let total: f64 = vulns.iter().sum();
    let forced_bit = forced.map_or(0u32, |f| 1 << f);
    let mut best: Option<(f64, f64, u32)> = None;
    for mask in 0u32..(1u32 << n) {
        if mask & forced_bit != forced_bit {
            continue;
        }
        let (mut v, mut c) = (0.0, 0.0);
        for i in 0..n {
            if mask & (1 << i) != 0 {
                v += vulns[i];
                c += costs[i];
            }
        }
        let ok = total <= 0.0 || v / total >= target - COVERAGE_TOL;
        if !ok {
            continue;
        }
        let better = match best {
            None => true,
            Some((bc, bv, _)) => c < bc || (c == bc && v > bv),
        };
        if better {
            best = Some((c, v, mask));
        }
    }
    let (_, _, mask) = best.ok_or(Error::TargetUnreachable { target, reachable: 1.0 })?;
    let layers = (0..n).filter(|i| mask & (1 << i) != 0).collect();
    Ok(Selection::of(layers, vulns, costs, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionPlan {
    pub scheme: Scheme,
    pub target_coverage: f64,
    pub selected: Vec<usize>,
    pub predicted_coverage: f64,
    /// Added flops as a fraction of one unprotected inference.
    pub compute_overhead: f64,
    /// Largest per-layer extra memory among the selected layers, as a
    /// fraction of the model's parameter count.
    pub memory_overhead: f64,
    pub head_always_included: bool,
}

impl ProtectionPlan {
    pub fn protects(&self, layer: usize) -> bool {
        self.selected.contains(&layer)
    }

    /// A plan protecting exactly `layers` (coverage left at zero).
    pub fn with_layers(scheme: Scheme, layers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            scheme,
            target_coverage: 0.0,
            selected: layers.into_iter().collect(),
            predicted_coverage: 0.0,
            compute_overhead: 0.0,
            memory_overhead: 0.0,
            head_always_included: false,
        }
    }
}

/// Plans protection of `model` for a coverage target using the greedy
/// selector; the head is always included when `force_head` is set.
pub fn plan_protection(
    model: &ModelGraph,
    vulns: &[LayerVulnerability],
    scheme: Scheme,
    target: f64,
    force_head: bool,
) -> Result<ProtectionPlan> {
    if vulns.len() != model.layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vulnerability rows for {} layers",
            vulns.len(),
            model.layers.len()
        )));
    }
    let v: Vec<f64> = vulns.iter().map(|l| l.v_layer).collect();
    let costs = relative_costs(model, scheme);
    let forced = force_head.then(|| model.head_index());
    let sel = select_layers(&v, &costs, target, forced)?;
    let params: f64 = model.layers.iter().map(|l| (l.in_dim * l.out_dim + l.out_dim) as f64).sum();
    let memory = sel
        .layers
        .iter()
        .map(|i| cost_model(&model.layers[*i], scheme).memory_elems)
        .fold(0.0, f64::max);
    Ok(ProtectionPlan {
        scheme,
        target_coverage: target,
        selected: sel.layers.into_iter().collect(),
        predicted_coverage: sel.coverage,
        compute_overhead: sel.cost,
        memory_overhead: memory / params,
        head_always_included: force_head,
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap_or(Ordering::Equal));
        let mut r = vec![0.0; x.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return if va == vb { 1.0 } else { 0.0 };
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injector::{InjectionRecord, InjectionSpec, Location, Mode};
    use crate::model::build_toy_model;

    fn rec(layer: usize, mismatch: bool, golden: f64, corrupt: f64) -> InjectionRecord {
        InjectionRecord {
            spec: InjectionSpec {
                layer_index: layer,
                location: Location::Output,
                element: 0,
                bit_index: Some(0),
                mode: Mode::FpMantissaBit,
                replacement: None,
                sample_id: 0,
                seed: 0,
            },
            original_value: 0.0,
            corrupted_value: 1.0,
            golden_loss: golden,
            corrupted_loss: corrupt,
            golden_class: 0,
            corrupted_class: mismatch as usize,
            mismatch,
            detected: None,
            detection_layer: None,
        }
    }

    fn campaign(records: Vec<InjectionRecord>) -> CampaignResult {
        CampaignResult { seed: 0, n_per_layer: records.len(), records, skipped: vec![] }
    }

    #[test]
    fn v_orig_examples() {
        assert_eq!(v_orig_from_macs(&[10, 10]), vec![0.5, 0.5]);
        assert_eq!(v_orig_from_macs(&[24, 72]), vec![0.25, 0.75]);
        let m = build_toy_model(2, 8, 4, 10, 1).unwrap();
        let v = compute_v_orig(&m);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p_prop_and_delta_loss() {
        let c = campaign((0..10).map(|i| rec(0, i < 3, 1.0, 1.0)).collect());
        assert_eq!(compute_p_prop(&c, 0).unwrap(), 0.3);
        assert_eq!(compute_delta_loss(&c, 0).unwrap(), 0.0);
        let c = campaign(vec![rec(1, false, 1.0, 1.2), rec(1, false, 1.0, 1.4)]);
        assert!((compute_delta_loss(&c, 1).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(compute_p_prop(&c, 1).unwrap(), 0.0);
        assert!(matches!(compute_p_prop(&c, 7), Err(Error::NoRecords { layer: 7 })));
    }

    #[test]
    fn curve_order_and_endpoints() {
        let c = build_coverage_curve(&[0.5, 0.3, 0.2], &[10.0, 5.0, 1.0]).unwrap();
        let order: Vec<_> = c.points.iter().filter_map(|p| p.layer).collect();
        assert_eq!(order, vec![2, 1, 0]);
        assert_eq!((c.points[0].overhead, c.points[0].coverage), (0.0, 0.0));
        assert_eq!(c.points.last().unwrap().coverage, 1.0);
        for w in c.points.windows(2) {
            assert!(w[1].overhead >= w[0].overhead && w[1].coverage >= w[0].coverage);
        }
        let single = build_coverage_curve(&[0.7], &[3.0]).unwrap();
        assert_eq!(single.points[1].coverage, 1.0);
        let equal = build_coverage_curve(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(equal.points.iter().filter_map(|p| p.layer).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(matches!(build_coverage_curve(&[1.0], &[-1.0]), Err(Error::NegativeCost { layer: 0 })));
    }

    #[test]
    fn selection_examples() {
        let v = [0.5, 0.3, 0.2];
        let c = [10.0, 5.0, 1.0];
        let s = select_layers(&v, &c, 0.5, None).unwrap();
        assert_eq!(s.layers, BTreeSet::from([1, 2]));
        assert_eq!(s.cost, 6.0);
        assert_eq!(select_layers_exhaustive(&v, &c, 0.5, None).unwrap().cost, 6.0);
        assert_eq!(select_layers(&v, &c, 1.0, None).unwrap().layers.len(), 3);
        let head_only = select_layers(&v, &c, 1e-9, Some(2)).unwrap();
        assert_eq!(head_only.layers, BTreeSet::from([2]));
    }

    #[test]
    fn completion_step_beats_pure_prefix() {
        // prefix takes the tiny cheap layer and then needs the huge one as well
        let v = [0.1, 0.9];
        let c = [0.01, 1.0];
        let s = select_layers(&v, &c, 0.9, None).unwrap();
        assert_eq!(s.layers, BTreeSet::from([1]));
    }

    #[test]
    fn cost_model_examples() {
        let m = build_toy_model(1, 4, 2, 3, 0).unwrap();
        let mut l = m.layers[3].clone();
        l.in_dim = 768;
        l.out_dim = 3072;
        l.tokens = 197;
        let r = checksum_cost_model(&l).compute_flops / duplication_cost_model(&l).compute_flops;
        assert!((r - 0.000_977).abs() < 1e-5, "{r}");
        for (i, o) in [(256, 256), (256, 768), (256, 1024), (1024, 256)] {
            l.in_dim = i;
            l.out_dim = o;
            let ratio = duplication_cost_model(&l).compute_flops / checksum_cost_model(&l).compute_flops;
            assert!(ratio > 100.0, "{i}x{o}: {ratio}");
        }
    }

    #[test]
    fn duplication_share_is_v_orig() {
        let m = build_toy_model(2, 8, 4, 10, 1).unwrap();
        let v = compute_v_orig(&m);
        for (a, b) in relative_costs(&m, Scheme::Duplication).iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn spearman() {
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(rank_correlation(&[1.0, 1.0, 2.0], &[5.0, 5.0, 9.0]), 1.0);
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{discrepancies, verify_layer, EpsilonModel, WeightChecksum};
use crate::analysis::ProtectionPlan;
use crate::error::{Error, Result};
use crate::injector::{faulty_gemm, Fault, Location};
use crate::model::{run_graph, ActivationTrace, GemmExecutor, LayerSpec, LayerStep, ModelGraph, SkipKind, Tap};
use crate::numerics::{gemm, Matrix, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    Replay,
    SkipSameSize,
    SkipNextBlock,
    SkipToHead,
}

impl fmt::Display for CorrectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrectionKind::Replay => "replay",
            CorrectionKind::SkipSameSize => "skip_same_size",
            CorrectionKind::SkipNextBlock => "skip_next_block",
            CorrectionKind::SkipToHead => "skip_to_head",
        })
    }
}

impl FromStr for CorrectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replay" => Ok(CorrectionKind::Replay),
            "skip_same_size" => Ok(CorrectionKind::SkipSameSize),
            "skip_next_block" => Ok(CorrectionKind::SkipNextBlock),
            "skip_to_head" => Ok(CorrectionKind::SkipToHead),
            _ => Err(Error::InvalidArgument(format!("unknown correction policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionPolicy {
    pub kind: CorrectionKind,
    pub max_replays: u32,
}

impl CorrectionPolicy {
    pub fn replay(max_replays: u32) -> Self {
        Self { kind: CorrectionKind::Replay, max_replays }
    }

    pub fn skip(kind: SkipKind) -> Self {
        let kind = match kind {
            SkipKind::SameSize => CorrectionKind::SkipSameSize,
            SkipKind::NextBlock => CorrectionKind::SkipNextBlock,
            SkipKind::ToHead => CorrectionKind::SkipToHead,
        };
        Self { kind, max_replays: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == CorrectionKind::Replay && self.max_replays == 0 {
            return Err(Error::InvalidArgument("replay policy needs max_replays >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardAction {
    /// Detection only: the flagged output was kept.
    DetectOnly,
    /// A replay produced an output that passed verification.
    Replayed { attempts: u32 },
    /// A replay reproduced the flagged output bit for bit, so the flag came
    /// from rounding rather than a transient fault; the output was kept.
    Reproduced { attempts: u32 },
    Skipped(SkipKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardEvent {
    pub layer: usize,
    pub flagged_rows: Vec<usize>,
    pub max_discrepancy: f64,
    pub action: GuardAction,
}

/// Clean-versus-faulty comparison of one verified row at the faulted layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowProbe {
    pub row: usize,
    pub d_clean: f64,
    pub d_faulty: f64,
    /// `Σ_o (Y'[b,o] − Y[b,o])`.
    pub shift: f64,
    /// Bound on how far the computed faulty discrepancy can sit from
    /// `d_clean − shift`: `γ_O·(Σ|Y| + Σ|Y'|) + 2u·(|d| + |d'|)` in the
    /// checksum precision plus `γ_{O+1}·Σ|Y' − Y|` for the shift itself.
    pub rounding_bound: f64,
    /// The shift moves the discrepancy past the threshold even in the worst
    /// rounding case, so the row must be flagged.
    pub guaranteed: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultProbe {
    pub layer: usize,
    pub threshold_low: f64,
    pub threshold_high: f64,
    pub rows: Vec<RowProbe>,
    pub triggered: bool,
}

impl FaultProbe {
    pub fn guaranteed(&self) -> bool {
        self.rows.iter().any(|r| r.guaranteed)
    }

    /// Row with the largest shift magnitude.
    pub fn dominant_row(&self) -> Option<&RowProbe> {
        self.rows.iter().max_by(|a, b| a.shift.abs().total_cmp(&b.shift.abs()))
    }
}

fn gamma(n: usize, u: f64) -> f64 {
    let nu = n as f64 * u;
    nu / (1.0 - nu)
}

fn probe_rows(x: &Matrix, clean: &Matrix, faulty: &Matrix, chk: &WeightChecksum, eps: &EpsilonModel, flagged: &[usize]) -> Result<Vec<RowProbe>> {
    let d0 = discrepancies(x, clean, chk)?;
    let d1 = discrepancies(x, faulty, chk)?;
    let u = if chk.precision == Precision::I64Exact { 0.0 } else { chk.precision.unit_roundoff() };
    let u64_ = Precision::F64.unit_roundoff();
    let o = clean.cols();
    Ok((0..clean.rows())
        .map(|b| {
            let (y0, y1) = (clean.row(b), faulty.row(b));
            let shift: f64 = y0.iter().zip(y1).map(|(a, c)| c - a).sum();
            let abs0: f64 = y0.iter().map(|v| v.abs()).sum();
            let abs1: f64 = y1.iter().map(|v| v.abs()).sum();
            let diff: f64 = y0.iter().zip(y1).map(|(a, c)| (c - a).abs()).sum();
            let rounding_bound = if eps.exact {
                0.0
            } else {
                gamma(o, u) * (abs0 + abs1) + 2.0 * u * (d0[b].abs() + d1[b].abs()) + gamma(o + 1, u64_) * diff
            };
            let guaranteed = if !shift.is_finite() || !d1[b].is_finite() {
                true
            } else if eps.exact {
                shift != 0.0
            } else if shift > 0.0 {
                shift > d0[b] - eps.threshold_low + rounding_bound
            } else {
                -shift > eps.threshold_high - d0[b] + rounding_bound
            };
            RowProbe {
                row: b,
                d_clean: d0[b],
                d_faulty: d1[b],
                shift,
                rounding_bound,
                guaranteed,
                flagged: flagged.contains(&b),
            }
        })
        .collect())
}

/// GEMM executor that verifies protected layers and applies a correction
/// policy (`None` = detect only). The only activation it keeps is the operand
/// of the layer being executed, which replays recompute from.
pub struct ProtectedExecutor<'a> {
    protected: BTreeSet<usize>,
    checksums: &'a BTreeMap<usize, WeightChecksum>,
    eps: &'a BTreeMap<usize, EpsilonModel>,
    policy: Option<CorrectionPolicy>,
    fault: &'a mut dyn Fault,
    probe: bool,
    pub events: Vec<GuardEvent>,
    pub probes: Vec<FaultProbe>,
    /// GEMM recomputations performed by replays.
    pub replays: u32,
    pub replay_macs: u64,
    /// Rows verified per protected layer.
    pub checked_rows: BTreeMap<usize, u64>,
}

impl<'a> ProtectedExecutor<'a> {
    pub fn new(
        model: &ModelGraph,
        plan: &ProtectionPlan,
        checksums: &'a BTreeMap<usize, WeightChecksum>,
        eps: &'a BTreeMap<usize, EpsilonModel>,
        policy: Option<CorrectionPolicy>,
        fault: &'a mut dyn Fault,
    ) -> Result<Self> {
        if let Some(p) = &policy {
            p.validate()?;
        }
        for &i in &plan.selected {
            let layer = model
                .layers
                .get(i)
                .ok_or_else(|| Error::IndexOutOfRange(format!("planned layer {i}")))?;
            let chk = checksums.get(&i).ok_or(Error::MissingChecksum { layer: i })?;
            if chk.precision != Precision::I64Exact && !eps.contains_key(&i) {
                return Err(Error::MissingEpsilon { layer: i });
            }
            if layer.is_integer() != (chk.precision == Precision::I64Exact) {
                return Err(Error::InvalidArgument(format!("layer {i}: checksum precision {} does not fit", chk.precision)));
            }
        }
        Ok(Self {
            protected: plan.selected.iter().copied().collect(),
            checksums,
            eps,
            policy,
            fault,
            probe: false,
            events: Vec::new(),
            probes: Vec::new(),
            replays: 0,
            replay_macs: 0,
            checked_rows: BTreeMap::new(),
        })
    }

    /// Also record clean-versus-faulty row comparisons where the fault lands.
    pub fn with_probe(mut self) -> Self {
        self.probe = true;
        self
    }

    pub fn detected(&self) -> bool {
        !self.events.is_empty()
    }

    pub fn first_detection(&self) -> Option<usize> {
        self.events.first().map(|e| e.layer)
    }

    fn eps_for(&self, layer: usize, chk: &WeightChecksum) -> EpsilonModel {
        match self.eps.get(&layer) {
            Some(e) if chk.precision != Precision::I64Exact => e.clone(),
            _ => EpsilonModel::exact(layer),
        }
    }
}

impl GemmExecutor for ProtectedExecutor<'_> {
    fn execute(&mut self, model: &ModelGraph, layer: &LayerSpec, x: &Matrix) -> Result<LayerStep> {
        let i = layer.index;
        let probing = self.probe
            && [Location::Input, Location::Weight, Location::Output]
                .iter()
                .any(|l| self.fault.targets(i, *l));
        let y = faulty_gemm(model, layer, x, self.fault)?;
        if !self.protected.contains(&i) {
            return Ok(LayerStep::Output(y));
        }
        let chk = &self.checksums[&i];
        let eps = self.eps_for(i, chk);
        let outcome = verify_layer(x, &y, chk, Some(&eps))?;
        *self.checked_rows.entry(i).or_default() += x.rows() as u64;
        if probing {
            let clean = gemm(x, &layer.weight, Some(&layer.bias), model.accum())?;
            self.probes.push(FaultProbe {
                layer: i,
                threshold_low: eps.threshold_low,
                threshold_high: eps.threshold_high,
                rows: probe_rows(x, &clean, &y, chk, &eps, &outcome.flagged)?,
                triggered: outcome.triggered,
            });
        }
        if !outcome.triggered {
            return Ok(LayerStep::Output(y));
        }
        let mut event = GuardEvent {
            layer: i,
            flagged_rows: outcome.flagged.clone(),
            max_discrepancy: outcome.max_discrepancy,
            action: GuardAction::DetectOnly,
        };
        let Some(policy) = self.policy else {
            self.events.push(event);
            return Ok(LayerStep::Output(y));
        };
        let skip = match policy.kind {
            CorrectionKind::Replay => None,
            CorrectionKind::SkipSameSize => Some(SkipKind::SameSize),
            CorrectionKind::SkipNextBlock => Some(SkipKind::NextBlock),
            CorrectionKind::SkipToHead => Some(SkipKind::ToHead),
        };
        if let Some(kind) = skip {
            event.action = GuardAction::Skipped(kind);
            self.events.push(event);
            return Ok(LayerStep::Skip(kind));
        }
        let mut previous = y;
        for attempt in 1..=policy.max_replays {
            self.replays += 1;
            self.replay_macs += layer.mac_count();
            let y = faulty_gemm(model, layer, x, self.fault)?;
            if y.bit_eq(&previous) {
                event.action = GuardAction::Reproduced { attempts: attempt };
                self.events.push(event);
                return Ok(LayerStep::Output(y));
            }
            if !verify_layer(x, &y, chk, Some(&eps))?.triggered {
                event.action = GuardAction::Replayed { attempts: attempt };
                self.events.push(event);
                return Ok(LayerStep::Output(y));
            }
            previous = y;
        }
        Err(Error::ReplayBudgetExhausted { layer: i, attempts: policy.max_replays })
    }
}

/// One inference with verification of the planned layers.
#[allow(clippy::too_many_arguments)]
pub fn protected_forward(
    model: &ModelGraph,
    input: &Matrix,
    label: usize,
    plan: &ProtectionPlan,
    checksums: &BTreeMap<usize, WeightChecksum>,
    eps: &BTreeMap<usize, EpsilonModel>,
    policy: Option<CorrectionPolicy>,
    fault: &mut dyn Fault,
) -> Result<(ActivationTrace, Vec<GuardEvent>)> {
    let mut exec = ProtectedExecutor::new(model, plan, checksums, eps, policy, fault)?;
    let trace = run_graph(model, input, label, &Tap::None, &mut exec)?
        .ok_or_else(|| Error::InvalidArgument("protected pass stopped early".into()))?;
    Ok((trace, exec.events))
}

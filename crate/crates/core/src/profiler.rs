//! Value-range profiling and golden-set selection.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, ActivationTrace, Dataset, ModelGraph, Sample, Tap};
use crate::numerics::Matrix;

/// Samples per profiling batch; batches are profiled in parallel and merged.
pub const PROFILE_BATCH: usize = 128;

/// Observed bounds of one layer. `min`/`max` cover the raw GEMM output;
/// `input_min`/`input_max` cover the GEMM operand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRange {
    pub min: f64,
    pub max: f64,
    pub input_min: f64,
    pub input_max: f64,
}

impl LayerRange {
    fn of(tap_in: &Matrix, tap_out: &Matrix) -> Self {
        let (min, max) = tap_out.min_max().unwrap_or((0.0, 0.0));
        let (input_min, input_max) = tap_in.min_max().unwrap_or((0.0, 0.0));
        Self { min, max, input_min, input_max }
    }

    fn union(self, o: Self) -> Self {
        Self {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
            input_min: self.input_min.min(o.input_min),
            input_max: self.input_max.max(o.input_max),
        }
    }

    pub fn contains_output(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }

    pub fn contains_input(&self, v: f64) -> bool {
        self.input_min <= v && v <= self.input_max
    }
}

/// Per-layer bounds, serialized as `{"<layer>": {"min": .., "max": .., ..}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RangeProfile {
    pub layers: BTreeMap<usize, LayerRange>,
}

impl RangeProfile {
    pub fn get(&self, layer: usize) -> Option<&LayerRange> {
        self.layers.get(&layer)
    }

    /// Elementwise union of two profiles.
    pub fn merge(mut self, other: &RangeProfile) -> Self {
        for (i, r) in &other.layers {
            self.layers
                .entry(*i)
                .and_modify(|cur| *cur = cur.union(*r))
                .or_insert(*r);
        }
        self
    }

    fn observe(&mut self, trace: &ActivationTrace) -> Result<()> {
        for (i, tap) in &trace.taps {
            let finite = |m: &Matrix| m.data().iter().all(|v| v.is_finite());
            if !finite(&tap.input) || !finite(&tap.output) {
                return Err(Error::NonFiniteActivation { layer: *i });
            }
            let r = LayerRange::of(&tap.input, &tap.output);
            self.layers.entry(*i).and_modify(|cur| *cur = cur.union(r)).or_insert(r);
        }
        Ok(())
    }
}

/// Exact min/max of every layer's GEMM operand and output over the dataset.
pub fn profile_ranges(model: &ModelGraph, dataset: &Dataset) -> Result<RangeProfile> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let partials = dataset
        .samples
        .par_chunks(PROFILE_BATCH)
        .map(|batch| {
            let mut profile = RangeProfile::default();
            for s in batch {
                profile.observe(&forward(model, &s.input, s.label, &Tap::All)?)?;
            }
            Ok(profile)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(partials.iter().fold(RangeProfile::default(), |acc, p| acc.merge(p)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenMember {
    pub sample_id: u64,
    pub label: usize,
    pub golden_loss: f64,
}

/// Samples the fault-free model classifies correctly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldenSet {
    pub members: Vec<GoldenMember>,
}

impl GoldenSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// First `n` members (a held-out split takes the rest via `skip`).
    pub fn take(&self, n: usize) -> Self {
        Self { members: self.members.iter().take(n).cloned().collect() }
    }

    pub fn skip(&self, n: usize) -> Self {
        Self { members: self.members.iter().skip(n).cloned().collect() }
    }

    /// Pairs each member with its dataset sample.
    pub fn samples<'a>(&'a self, dataset: &'a Dataset) -> Result<Vec<(&'a GoldenMember, &'a Sample)>> {
        let by_id: BTreeMap<u64, &Sample> = dataset.samples.iter().map(|s| (s.id, s)).collect();
        self.members
            .iter()
            .map(|m| {
                by_id
                    .get(&m.sample_id)
                    .map(|s| (m, *s))
                    .ok_or_else(|| Error::IndexOutOfRange(format!("golden sample {} not in dataset", m.sample_id)))
            })
            .collect()
    }
}

pub fn select_golden(model: &ModelGraph, dataset: &Dataset) -> Result<GoldenSet> {
    let members: Vec<Option<GoldenMember>> = dataset
        .samples
        .par_iter()
        .map(|s| {
            let t = forward(model, &s.input, s.label, &Tap::None)?;
            Ok((t.predicted_class == s.label).then_some(GoldenMember {
                sample_id: s.id,
                label: s.label,
                golden_loss: t.loss,
            }))
        })
        .collect::<Result<_>>()?;
    let members: Vec<GoldenMember> = members.into_iter().flatten().collect();
    if members.is_empty() {
        return Err(Error::EmptyGoldenSet);
    }
    Ok(GoldenSet { members })
}

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{inject_forward, sample_injection, InjectionRecord, InjectionSpec, Location, Mode, SamplingPolicy};
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelGraph, Sample};
use crate::profiler::{GoldenMember, GoldenSet, RangeProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub n_per_layer: usize,
    pub seed: u64,
    /// Target layers; all layers when absent.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    #[serde(flatten)]
    pub sampling: SamplingPolicy,
}

impl CampaignConfig {
    pub fn new(n_per_layer: usize, seed: u64) -> Self {
        Self { n_per_layer, seed, layers: None, sampling: SamplingPolicy::default() }
    }

    pub fn with_modes(mut self, modes: Vec<Mode>) -> Self {
        self.sampling.modes = modes;
        self
    }

    pub fn with_locations(mut self, locations: Vec<Location>) -> Self {
        self.sampling.locations = locations;
        self
    }

    pub fn with_layers(mut self, layers: Vec<usize>) -> Self {
        self.layers = Some(layers);
        self
    }
}

/// Per-injection PRNG, independent of scheduling order.
pub(crate) fn injection_rng(seed: u64, layer: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((layer as u64) << 32) | k as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInjection {
    pub layer: usize,
    pub k: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerTally {
    pub injections: usize,
    pub mismatches: usize,
    pub detected: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub seed: u64,
    pub n_per_layer: usize,
    pub records: Vec<InjectionRecord>,
    pub skipped: Vec<SkippedInjection>,
}

impl CampaignResult {
    /// Exact per-layer aggregation of the records.
    pub fn tallies(&self) -> BTreeMap<usize, LayerTally> {
        let mut out: BTreeMap<usize, LayerTally> = BTreeMap::new();
        for r in &self.records {
            let t = out.entry(r.spec.layer_index).or_default();
            t.injections += 1;
            t.mismatches += r.mismatch as usize;
            t.detected += (r.detected == Some(true)) as usize;
        }
        for s in &self.skipped {
            out.entry(s.layer).or_default().skipped += 1;
        }
        out
    }

    pub fn layer_records(&self, layer: usize) -> impl Iterator<Item = &InjectionRecord> {
        self.records.iter().filter(move |r| r.spec.layer_index == layer)
    }

    pub fn summary(&self) -> CampaignSummary {
        CampaignSummary {
            seed: self.seed,
            n_per_layer: self.n_per_layer,
            records: self.records.len(),
            layers: self.tallies(),
            skipped: self.skipped.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub seed: u64,
    pub n_per_layer: usize,
    pub records: usize,
    pub layers: BTreeMap<usize, LayerTally>,
    pub skipped: Vec<SkippedInjection>,
}

/// Injects `n_per_layer` faults into every target layer and records the
/// outcome of each unprotected inference.
pub fn run_campaign(
    model: &ModelGraph,
    dataset: &Dataset,
    golden: &GoldenSet,
    ranges: &RangeProfile,
    config: &CampaignConfig,
) -> Result<CampaignResult> {
    run_campaign_with(model, dataset, golden, ranges, config, &|sample, member, spec| {
        inject_forward(model, &sample.input, member, spec)
    })
}

/// Campaign driver with a custom per-injection runner. Sampling errors are
/// recorded as skips; runner errors abort the campaign.
pub fn run_campaign_with(
    model: &ModelGraph,
    dataset: &Dataset,
    golden: &GoldenSet,
    ranges: &RangeProfile,
    config: &CampaignConfig,
    runner: &(dyn Fn(&Sample, &GoldenMember, &InjectionSpec) -> Result<InjectionRecord> + Sync),
) -> Result<CampaignResult> {
    if golden.is_empty() {
        return Err(Error::EmptyGoldenSet);
    }
    let layers: Vec<usize> = match &config.layers {
        Some(l) => l.clone(),
        None => (0..model.layers.len()).collect(),
    };
    if let Some(bad) = layers.iter().find(|l| **l >= model.layers.len()) {
        return Err(Error::IndexOutOfRange(format!("campaign layer {bad}")));
    }
    let members: BTreeMap<u64, &GoldenMember> = golden.members.iter().map(|m| (m.sample_id, m)).collect();
    let jobs: Vec<(usize, usize)> = layers
        .iter()
        .flat_map(|&l| (0..config.n_per_layer).map(move |k| (l, k)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(layer, k)| {
            let mut rng = injection_rng(config.seed, layer, k);
            let spec =
                match sample_injection(model, dataset, golden, ranges, layer, &config.sampling, config.seed, &mut rng) {
                    Ok(spec) => spec,
                    Err(e @ (Error::RetryBudgetExhausted { .. } | Error::InvalidArgument(_))) => {
                        return Ok(Err(SkippedInjection { layer, k, reason: e.to_string() }))
                    }
                    Err(e) => return Err(e),
                };
            let sample = dataset.get(spec.sample_id).expect("sampled from the dataset");
            Ok(Ok(runner(sample, members[&spec.sample_id], &spec)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(s) => skipped.push(s),
        }
    }
    Ok(CampaignResult { seed: config.seed, n_per_layer: config.n_per_layer, records, skipped })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    layer: usize,
    location: Location,
    element: usize,
    bit: Option<u32>,
    mode: Mode,
    sample: u64,
    orig: f64,
    corrupt: f64,
    golden_loss: f64,
    corrupt_loss: f64,
    mismatch: bool,
    detected: Option<bool>,
    detection_layer: Option<usize>,
    golden_class: usize,
    corrupt_class: usize,
    replacement: Option<f64>,
    seed: u64,
}

/// Writes one CSV row per record, preceded by an optional `# ...` comment.
pub fn write_campaign_csv<W: Write>(mut w: W, records: &[InjectionRecord], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    for r in records {
        csv.serialize(CsvRow {
            layer: r.spec.layer_index,
            location: r.spec.location,
            element: r.spec.element,
            bit: r.spec.bit_index,
            mode: r.spec.mode,
            sample: r.spec.sample_id,
            orig: r.original_value,
            corrupt: r.corrupted_value,
            golden_loss: r.golden_loss,
            corrupt_loss: r.corrupted_loss,
            mismatch: r.mismatch,
            detected: r.detected,
            detection_layer: r.detection_layer,
            golden_class: r.golden_class,
            corrupt_class: r.corrupted_class,
            replacement: r.spec.replacement,
            seed: r.spec.seed,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_campaign_csv<R: Read>(r: R) -> Result<Vec<InjectionRecord>> {
    let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    csv.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(InjectionRecord {
                spec: InjectionSpec {
                    layer_index: row.layer,
                    location: row.location,
                    element: row.element,
                    bit_index: row.bit,
                    mode: row.mode,
                    replacement: row.replacement,
                    sample_id: row.sample,
                    seed: row.seed,
                },
                original_value: row.orig,
                corrupted_value: row.corrupt,
                golden_loss: row.golden_loss,
                corrupted_loss: row.corrupt_loss,
                golden_class: row.golden_class,
                corrupted_class: row.corrupt_class,
                mismatch: row.mismatch,
                detected: row.detected,
                detection_layer: row.detection_layer,
            })
        })
        .collect()
}

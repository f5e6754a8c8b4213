//! Range-constrained single-fault injection into GEMM operands, weights and
//! outputs.

mod campaign;
mod stats;

use std::borrow::Cow;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{run_graph, Dataset, GemmExecutor, LayerSpec, LayerStep, LayerTap, ModelGraph, Tap};
use crate::numerics::{flip_value_bit, gemm, round_to_dtype, DType, Matrix};
use crate::profiler::{GoldenMember, GoldenSet, RangeProfile};

pub use campaign::{
    read_campaign_csv, run_campaign, run_campaign_with, write_campaign_csv, CampaignConfig, CampaignResult,
    CampaignSummary, LayerTally, SkippedInjection,
};
pub use stats::margin_of_error;
pub(crate) use stats::two_sided_z;

/// Attempts made to find an in-range, value-changing corruption.
pub const DEFAULT_RETRY_BUDGET: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Input,
    Output,
    Weight,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Location::Input => "input",
            Location::Output => "output",
            Location::Weight => "weight",
        })
    }
}

impl FromStr for Location {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Location::Input),
            "output" => Ok(Location::Output),
            "weight" => Ok(Location::Weight),
            _ => Err(Error::InvalidArgument(format!("unknown location `{s}`"))),
        }
    }
}

/// What a fault does to the targeted element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Mode {
    IntBit,
    FpExponentBit,
    FpMantissaBit,
    FpSignBit,
    /// Uniform value inside the layer's observed range.
    RandomValue,
    FixedValue(f64),
}

impl Mode {
    /// Bits a flip of this mode may target in `dtype`, or `None` when the
    /// mode is not a bit flip or does not apply to the encoding.
    pub fn bit_range(self, dtype: DType) -> Option<Range<u32>> {
        let layout = dtype.bit_layout();
        match self {
            Mode::IntBit if dtype.is_integer() => Some(0..layout.width),
            Mode::FpExponentBit if !dtype.is_integer() => Some(layout.exponent),
            Mode::FpMantissaBit if !dtype.is_integer() => Some(layout.mantissa),
            Mode::FpSignBit if !dtype.is_integer() => Some(layout.sign..layout.sign + 1),
            _ => None,
        }
    }

    pub fn is_bit_flip(self) -> bool {
        matches!(self, Mode::IntBit | Mode::FpExponentBit | Mode::FpMantissaBit | Mode::FpSignBit)
    }

    pub fn applies_to(self, dtype: DType) -> bool {
        !self.is_bit_flip() || self.bit_range(dtype).is_some()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::IntBit => f.write_str("int_bit"),
            Mode::FpExponentBit => f.write_str("fp_exponent_bit"),
            Mode::FpMantissaBit => f.write_str("fp_mantissa_bit"),
            Mode::FpSignBit => f.write_str("fp_sign_bit"),
            Mode::RandomValue => f.write_str("random_value"),
            Mode::FixedValue(v) => write!(f, "fixed_value({v:?})"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "int_bit" => Mode::IntBit,
            "fp_exponent_bit" => Mode::FpExponentBit,
            "fp_mantissa_bit" => Mode::FpMantissaBit,
            "fp_sign_bit" => Mode::FpSignBit,
            "random_value" => Mode::RandomValue,
            _ => {
                let v = s
                    .strip_prefix("fixed_value(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown injection mode `{s}`")))?;
                Mode::FixedValue(v)
            }
        })
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A fully resolved single fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub layer_index: usize,
    pub location: Location,
    /// Flat row-major index into the targeted tensor.
    pub element: usize,
    pub bit_index: Option<u32>,
    pub mode: Mode,
    /// Replacement value drawn for `random_value`.
    pub replacement: Option<f64>,
    pub sample_id: u64,
    pub seed: u64,
}

impl InjectionSpec {
    /// Value this injection writes over `original` in a tensor of `dtype`.
    pub fn corrupt(&self, original: f64, dtype: DType) -> Result<f64> {
        match self.mode {
            Mode::FixedValue(v) => Ok(round_to_dtype(v, dtype)),
            Mode::RandomValue => self
                .replacement
                .map(|v| round_to_dtype(v, dtype))
                .ok_or_else(|| Error::InvalidArgument("random_value spec without replacement".into())),
            mode => {
                let bit = self
                    .bit_index
                    .ok_or_else(|| Error::InvalidArgument(format!("{mode} spec without bit index")))?;
                if mode.bit_range(dtype).is_none_or(|r| !r.contains(&bit)) {
                    return Err(Error::InvalidArgument(format!("bit {bit} is not a {mode} bit of {dtype}")));
                }
                flip_value_bit(original, bit, dtype)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub spec: InjectionSpec,
    pub original_value: f64,
    pub corrupted_value: f64,
    pub golden_loss: f64,
    pub corrupted_loss: f64,
    pub golden_class: usize,
    pub corrupted_class: usize,
    pub mismatch: bool,
    pub detected: Option<bool>,
    pub detection_layer: Option<usize>,
}

/// A transient fault hook consulted by fault-aware GEMM executors.
pub trait Fault {
    /// Whether the fault still has to act on `location` of `layer`.
    fn targets(&self, layer: usize, location: Location) -> bool;

    /// Corrupts `tensor` in place (operand copy, weight copy or output).
    fn apply(&mut self, layer: &LayerSpec, location: Location, tensor: &mut Matrix) -> Result<()>;
}

/// No fault at all.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoFault;

impl Fault for NoFault {
    fn targets(&self, _: usize, _: Location) -> bool {
        false
    }

    fn apply(&mut self, _: &LayerSpec, _: Location, _: &mut Matrix) -> Result<()> {
        Ok(())
    }
}

/// Applies one resolved spec the first time its target is reached.
#[derive(Debug, Clone)]
pub struct SpecFault {
    pub spec: InjectionSpec,
    /// `(original, corrupted)` once fired.
    pub applied: Option<(f64, f64)>,
}

impl SpecFault {
    pub fn new(spec: InjectionSpec) -> Self {
        Self { spec, applied: None }
    }
}

impl Fault for SpecFault {
    fn targets(&self, layer: usize, location: Location) -> bool {
        self.applied.is_none() && self.spec.layer_index == layer && self.spec.location == location
    }

    fn apply(&mut self, _: &LayerSpec, _: Location, tensor: &mut Matrix) -> Result<()> {
        let e = self.spec.element;
        if e >= tensor.len() {
            return Err(Error::IndexOutOfRange(format!(
                "element {e} of a {}x{} {} tensor in layer {}",
                tensor.rows(),
                tensor.cols(),
                self.spec.location,
                self.spec.layer_index
            )));
        }
        let original = tensor.data()[e];
        let corrupted = self.spec.corrupt(original, tensor.dtype())?;
        tensor.set_flat(e, corrupted)?;
        self.applied = Some((original, corrupted));
        Ok(())
    }
}

/// GEMM with an optional fault on the operand copy, a scratch weight copy,
/// or the output. The stored model is never modified.
pub fn faulty_gemm(model: &ModelGraph, layer: &LayerSpec, x: &Matrix, fault: &mut dyn Fault) -> Result<Matrix> {
    let i = layer.index;
    let mut x = Cow::Borrowed(x);
    if fault.targets(i, Location::Input) {
        fault.apply(layer, Location::Input, x.to_mut())?;
    }
    let mut w = Cow::Borrowed(&layer.weight);
    if fault.targets(i, Location::Weight) {
        fault.apply(layer, Location::Weight, w.to_mut())?;
    }
    let mut y = gemm(&x, &w, Some(&layer.bias), model.accum())?;
    if fault.targets(i, Location::Output) {
        fault.apply(layer, Location::Output, &mut y)?;
    }
    Ok(y)
}

/// Unprotected executor carrying a fault.
pub struct FaultyGemm<'f> {
    pub fault: &'f mut dyn Fault,
}

impl GemmExecutor for FaultyGemm<'_> {
    fn execute(&mut self, model: &ModelGraph, layer: &LayerSpec, x: &Matrix) -> Result<LayerStep> {
        Ok(LayerStep::Output(faulty_gemm(model, layer, x, self.fault)?))
    }
}

/// Sampling knobs shared by single draws and campaigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    pub modes: Vec<Mode>,
    pub locations: Vec<Location>,
    /// Keep corruptions that leave the value unchanged (e.g. 0.0 → −0.0).
    pub count_noop: bool,
    pub retry_budget: u32,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            modes: vec![Mode::IntBit, Mode::FpExponentBit, Mode::FpMantissaBit],
            locations: vec![Location::Output],
            count_noop: false,
            retry_budget: DEFAULT_RETRY_BUDGET,
        }
    }
}

/// Allowed `[lo, hi]` for corrupted values at a location.
pub fn location_bounds(layer: &LayerSpec, ranges: &RangeProfile, location: Location) -> Result<(f64, f64)> {
    if location == Location::Weight {
        return Ok(layer.weight.min_max().unwrap_or((0.0, 0.0)));
    }
    let r = ranges
        .get(layer.index)
        .ok_or_else(|| Error::InvalidArgument(format!("no range profile for layer {}", layer.index)))?;
    Ok(match location {
        Location::Input => (r.input_min, r.input_max),
        _ => (r.min, r.max),
    })
}

/// Draws element, mode and bit until the corruption is finite, inside
/// `[lo, hi]` and (unless `count_noop`) different from the original.
/// `FixedValue` modes are applied as given without range checks.
#[allow(clippy::too_many_arguments)]
pub fn sample_corruption(
    layer_index: usize,
    location: Location,
    tensor: &Matrix,
    bounds: (f64, f64),
    policy: &SamplingPolicy,
    sample_id: u64,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionSpec> {
    let dtype = tensor.dtype();
    let modes: Vec<Mode> = policy.modes.iter().copied().filter(|m| m.applies_to(dtype)).collect();
    if modes.is_empty() || tensor.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no injection mode applies to {dtype} {location} of layer {layer_index}"
        )));
    }
    let (lo, hi) = bounds;
    for _ in 0..policy.retry_budget {
        let element = rng.random_range(0..tensor.len());
        let mode = modes[rng.random_range(0..modes.len())];
        let mut spec = InjectionSpec {
            layer_index,
            location,
            element,
            bit_index: None,
            mode,
            replacement: None,
            sample_id,
            seed,
        };
        match mode {
            Mode::FixedValue(_) => return Ok(spec),
            Mode::RandomValue => spec.replacement = Some(round_to_dtype(lo + (hi - lo) * rng.random::<f64>(), dtype)),
            m => {
                let bits = m.bit_range(dtype).expect("filtered above");
                spec.bit_index = Some(rng.random_range(bits));
            }
        }
        let original = tensor.data()[element];
        let corrupted = spec.corrupt(original, dtype)?;
        let in_range = corrupted.is_finite() && lo <= corrupted && corrupted <= hi;
        let changes = policy.count_noop || corrupted != original;
        if in_range && changes {
            return Ok(spec);
        }
    }
    Err(Error::RetryBudgetExhausted { layer: layer_index, attempts: policy.retry_budget })
}

/// Picks a golden sample, a location and a range-respecting corruption for
/// `layer_index`. The clean tensors come from a prefix pass that stops right
/// after the target layer.
#[allow(clippy::too_many_arguments)]
pub fn sample_injection(
    model: &ModelGraph,
    dataset: &Dataset,
    golden: &GoldenSet,
    ranges: &RangeProfile,
    layer_index: usize,
    policy: &SamplingPolicy,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionSpec> {
    if golden.is_empty() {
        return Err(Error::EmptyGoldenSet);
    }
    let layer = model
        .layers
        .get(layer_index)
        .ok_or_else(|| Error::IndexOutOfRange(format!("layer {layer_index}")))?;
    if policy.locations.is_empty() {
        return Err(Error::InvalidArgument("no injection locations configured".into()));
    }
    let member = &golden.members[rng.random_range(0..golden.len())];
    let location = policy.locations[rng.random_range(0..policy.locations.len())];
    let sample = dataset
        .get(member.sample_id)
        .ok_or_else(|| Error::IndexOutOfRange(format!("golden sample {} not in dataset", member.sample_id)))?;
    let tensor = match location {
        Location::Weight => Cow::Borrowed(&layer.weight),
        _ => {
            let t = run_prefix(model, &sample.input, sample.label, layer_index)?;
            Cow::Owned(if location == Location::Input { t.input } else { t.output })
        }
    };
    let bounds = location_bounds(layer, ranges, location)?;
    sample_corruption(layer_index, location, &tensor, bounds, policy, member.sample_id, seed, rng)
}

fn run_prefix(model: &ModelGraph, input: &Matrix, label: usize, last: usize) -> Result<LayerTap> {
    let mut rec = Recorder { last, tap: None };
    run_graph(model, input, label, &Tap::None, &mut rec)?;
    rec.tap
        .ok_or_else(|| Error::InvalidArgument(format!("layer {last} was not reached")))
}

/// Clean pass that records the operand and output of layer `last`, then stops.
struct Recorder {
    last: usize,
    tap: Option<LayerTap>,
}

impl GemmExecutor for Recorder {
    fn execute(&mut self, model: &ModelGraph, layer: &LayerSpec, x: &Matrix) -> Result<LayerStep> {
        if layer.index > self.last {
            return Ok(LayerStep::Stop);
        }
        let y = gemm(x, &layer.weight, Some(&layer.bias), model.accum())?;
        if layer.index == self.last {
            self.tap = Some(LayerTap { input: x.clone(), output: y.clone() });
        }
        Ok(LayerStep::Output(y))
    }
}

/// Runs one inference with `spec` applied and compares against the golden
/// member's clean outcome.
pub fn inject_forward(
    model: &ModelGraph,
    input: &Matrix,
    golden: &GoldenMember,
    spec: &InjectionSpec,
) -> Result<InjectionRecord> {
    let mut fault = SpecFault::new(spec.clone());
    let trace = run_graph(model, input, golden.label, &Tap::None, &mut FaultyGemm { fault: &mut fault })?
        .ok_or_else(|| Error::InvalidArgument("faulty pass stopped early".into()))?;
    let (original_value, corrupted_value) = fault
        .applied
        .ok_or_else(|| Error::InvalidArgument(format!("layer {} never executed", spec.layer_index)))?;
    Ok(InjectionRecord {
        spec: spec.clone(),
        original_value,
        corrupted_value,
        golden_loss: golden.golden_loss,
        corrupted_loss: trace.loss,
        golden_class: golden.label,
        corrupted_class: trace.predicted_class,
        mismatch: trace.predicted_class != golden.label,
        detected: None,
        detection_layer: None,
    })
}

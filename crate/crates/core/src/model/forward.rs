use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Activation, LayerKind, LayerSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::numerics::{gemm, round_to_dtype, DType, Matrix};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Which layers' GEMM operands and outputs a forward pass captures.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Tap {
    #[default]
    None,
    All,
    Layers(BTreeSet<usize>),
}

impl Tap {
    pub fn layer(index: usize) -> Self {
        Tap::Layers(BTreeSet::from([index]))
    }

    pub fn contains(&self, index: usize) -> bool {
        match self {
            Tap::None => false,
            Tap::All => true,
            Tap::Layers(set) => set.contains(&index),
        }
    }
}

/// GEMM operand and raw GEMM output (bias included, before any activation).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTap {
    pub input: Matrix,
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub taps: BTreeMap<usize, LayerTap>,
    pub logits: Vec<f64>,
    pub predicted_class: usize,
    pub loss: f64,
}

impl ActivationTrace {
    /// Encoding-exact comparison of the logits.
    pub fn logits_bit_eq(&self, other: &Self) -> bool {
        self.logits.len() == other.logits.len()
            && self.logits.iter().zip(&other.logits).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Where control goes when a layer is abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipKind {
    /// Next layer with the same input width receives the saved operand.
    SameSize,
    /// Resume at the start of the next transformer block.
    NextBlock,
    /// Go straight to the prediction head.
    ToHead,
}

/// Result of executing one GEMM.
#[derive(Debug, Clone)]
pub enum LayerStep {
    Output(Matrix),
    Skip(SkipKind),
    /// Abort the pass (used when only a prefix of the graph is needed).
    Stop,
}

/// Computes the GEMM of a layer given its operand. Implementations may
/// corrupt, verify or replay the computation.
pub trait GemmExecutor {
    fn execute(&mut self, model: &ModelGraph, layer: &LayerSpec, x: &Matrix) -> Result<LayerStep>;
}

/// The fault-free GEMM.
#[derive(Debug, Default, Clone, Copy)]
pub struct PlainGemm;

impl GemmExecutor for PlainGemm {
    fn execute(&mut self, model: &ModelGraph, layer: &LayerSpec, x: &Matrix) -> Result<LayerStep> {
        Ok(LayerStep::Output(gemm(x, &layer.weight, Some(&layer.bias), model.accum())?))
    }
}

/// Fault-free forward pass; `label` only affects the reported loss.
pub fn forward(model: &ModelGraph, input: &Matrix, label: usize, tap: &Tap) -> Result<ActivationTrace> {
    run_graph(model, input, label, tap, &mut PlainGemm)?
        .ok_or_else(|| Error::InvalidArgument("plain forward cannot stop early".into()))
}

/// Runs the graph with a custom GEMM executor. Returns `None` when the
/// executor stopped the pass.
pub fn run_graph(
    model: &ModelGraph,
    input: &Matrix,
    label: usize,
    tap: &Tap,
    exec: &mut dyn GemmExecutor,
) -> Result<Option<ActivationTrace>> {
    if (input.rows(), input.cols()) != (model.tokens, model.input_dim) {
        return Err(Error::DimensionMismatch(format!(
            "input is {}x{}, model expects {}x{}",
            input.rows(),
            input.cols(),
            model.tokens,
            model.input_dim
        )));
    }
    if label >= model.num_classes {
        return Err(Error::InvalidArgument(format!("label {label} >= {} classes", model.num_classes)));
    }
    let act = model.activation_dtype();
    let mut taps = BTreeMap::new();
    let mut h: Option<Matrix> = None;
    let mut branch: Option<Matrix> = None;
    let mut logits = None;
    // (first layer to execute, operand override for that layer)
    let mut resume: Option<(usize, Option<Matrix>)> = None;

    for layer in &model.layers {
        let i = layer.index;
        let mut override_input = None;
        if let Some((target, saved)) = resume.take() {
            if i < target {
                resume = Some((target, saved));
                continue;
            }
            override_input = saved;
        }
        let prenorm = match override_input {
            Some(x) if layer.kind == LayerKind::Head => x.head_rows(1),
            Some(x) => x,
            None => {
                let raw = match layer.kind {
                    LayerKind::Embed => to_dtype(input, act),
                    LayerKind::Qkv | LayerKind::MlpFc1 => residual(&h)?.clone(),
                    LayerKind::Head => residual(&h)?.head_rows(1),
                    LayerKind::AttnProj | LayerKind::MlpFc2 => branch
                        .take()
                        .ok_or_else(|| Error::InvalidArgument(format!("layer {i} has no branch input")))?,
                };
                if layer.normalize_before {
                    layer_norm(&raw, act)
                } else {
                    raw
                }
            }
        };
        let operand = quantize_operand(layer, &prenorm)?;
        match exec.execute(model, layer, &operand)? {
            LayerStep::Output(y) => {
                if tap.contains(i) {
                    taps.insert(i, LayerTap { input: operand, output: y.clone() });
                }
                let y = activate(layer, &dequantize_output(layer, y), act);
                match layer.kind {
                    LayerKind::Embed => h = Some(y),
                    LayerKind::Qkv => branch = Some(token_mix(&y, model.dim, act)),
                    LayerKind::MlpFc1 => branch = Some(y),
                    LayerKind::AttnProj | LayerKind::MlpFc2 => h = Some(add(residual(&h)?, &y, act)),
                    LayerKind::Head => logits = Some(y.data().to_vec()),
                }
            }
            LayerStep::Skip(kind) => {
                branch = None;
                resume = Some(skip_target(model, layer, kind, prenorm)?);
            }
            LayerStep::Stop => return Ok(None),
        }
    }
    let logits = logits.ok_or_else(|| Error::InvalidArgument("graph produced no logits".into()))?;
    let predicted_class = argmax(&logits);
    let loss = cross_entropy(&logits, label);
    Ok(Some(ActivationTrace { taps, logits, predicted_class, loss }))
}

fn residual(h: &Option<Matrix>) -> Result<&Matrix> {
    h.as_ref().ok_or_else(|| Error::InvalidArgument("residual stream used before embed".into()))
}

fn skip_target(model: &ModelGraph, layer: &LayerSpec, kind: SkipKind, saved: Matrix) -> Result<(usize, Option<Matrix>)> {
    let missing = || Error::SkipTargetMissing {
        layer: layer.index,
        policy: format!("{kind:?}"),
    };
    if !layer.kind.in_block() {
        return Err(missing());
    }
    let later = &model.layers[layer.index + 1..];
    match kind {
        SkipKind::SameSize => later
            .iter()
            .find(|l| l.in_dim == layer.in_dim)
            .map(|l| (l.index, Some(saved)))
            .ok_or_else(missing),
        SkipKind::NextBlock => later
            .iter()
            .find(|l| matches!(l.kind, LayerKind::Qkv | LayerKind::Head))
            .map(|l| (l.index, None))
            .ok_or_else(missing),
        SkipKind::ToHead => Ok((model.head_index(), None)),
    }
}

fn to_dtype(m: &Matrix, dtype: DType) -> Matrix {
    if m.dtype() == dtype {
        m.clone()
    } else {
        Matrix::from_parts_unchecked(
            m.rows(),
            m.cols(),
            dtype,
            m.data().iter().map(|v| round_to_dtype(*v, dtype)).collect(),
        )
    }
}

fn quantize_operand(layer: &LayerSpec, x: &Matrix) -> Result<Matrix> {
    match layer.quant {
        Some(q) => Matrix::from_f64_rounded(
            x.rows(),
            x.cols(),
            DType::I8,
            x.data().iter().map(|v| (v / q.input_scale).clamp(-127.0, 127.0)).collect(),
        ),
        None => Ok(to_dtype(x, layer.input_dtype())),
    }
}

fn dequantize_output(layer: &LayerSpec, y: Matrix) -> Matrix {
    match layer.quant {
        Some(q) => {
            let s = q.input_scale * q.weight_scale;
            Matrix::from_parts_unchecked(y.rows(), y.cols(), DType::F64, y.data().iter().map(|v| v * s).collect())
        }
        None => y,
    }
}

fn activate(layer: &LayerSpec, y: &Matrix, act: DType) -> Matrix {
    let f: fn(f64) -> f64 = match layer.activation {
        Activation::None => return to_dtype(y, act),
        Activation::Relu => |v| v.max(0.0),
        Activation::Gelu => gelu,
    };
    map_round(y, act, f)
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn map_round(m: &Matrix, dtype: DType, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_parts_unchecked(
        m.rows(),
        m.cols(),
        dtype,
        m.data().iter().map(|v| round_to_dtype(f(*v), dtype)).collect(),
    )
}

fn add(a: &Matrix, b: &Matrix, dtype: DType) -> Matrix {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| round_to_dtype(x + y, dtype))
        .collect();
    Matrix::from_parts_unchecked(a.rows(), a.cols(), dtype, data)
}

/// Per-token layer norm without affine parameters, epsilon 1e-5.
pub fn layer_norm(x: &Matrix, dtype: DType) -> Matrix {
    let n = x.cols() as f64;
    let mut data = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        data.extend(row.iter().map(|v| round_to_dtype((v - mean) * inv, dtype)));
    }
    Matrix::from_parts_unchecked(x.rows(), x.cols(), dtype, data)
}

/// Collapses q|k|v to model width and blends each token with the token mean.
fn token_mix(qkv: &Matrix, dim: usize, dtype: DType) -> Matrix {
    let tokens = qkv.rows();
    let mut merged = vec![0.0; tokens * dim];
    for t in 0..tokens {
        let row = qkv.row(t);
        for j in 0..dim {
            merged[t * dim + j] = (row[j] + row[dim + j] + row[2 * dim + j]) / 3.0;
        }
    }
    let mut mean = vec![0.0; dim];
    for t in 0..tokens {
        for j in 0..dim {
            mean[j] += merged[t * dim + j];
        }
    }
    let data = (0..tokens * dim)
        .map(|i| round_to_dtype(0.5 * merged[i] + 0.5 * mean[i % dim] / tokens as f64, dtype))
        .collect();
    Matrix::from_parts_unchecked(tokens, dim, dtype, data)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy of `logits` against class `label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    (lse - logits[label]).max(0.0)
}

/// Index of the largest logit; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

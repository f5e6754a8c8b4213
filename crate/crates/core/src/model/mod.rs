//! A minimal GEMM-layer pipeline shaped like a vision transformer.
//!
//! Every block contributes four protected GEMMs (`qkv`, `attn_proj`,
//! `mlp_fc1`, `mlp_fc2`). Between `qkv` and `attn_proj` a fixed token-mixing
//! average stands in for the score and value matmuls, which are not GEMM
//! targets here. The graph starts with an `embed` GEMM and ends with a
//! classification `head` reading the first token.

mod build;
mod data;
mod forward;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DType, Matrix, Precision};

pub use build::{build_toy_model, ToyConfig};
pub use data::{Dataset, Sample};
pub use forward::{
    cross_entropy, forward, layer_norm, run_graph, softmax, ActivationTrace, GemmExecutor, LayerStep, LayerTap,
    PlainGemm, SkipKind, Tap,
};
pub use weights::{decode_container, encode_container, load_weights, save_weights, Tensor, MAGIC, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Embed,
    Qkv,
    AttnProj,
    MlpFc1,
    MlpFc2,
    Head,
}

impl LayerKind {
    pub fn in_block(self) -> bool {
        !matches!(self, LayerKind::Embed | LayerKind::Head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Gelu,
    Relu,
}

/// Symmetric quantization scales of an integer layer:
/// `real_input = q_input * input_scale`, `real_weight = q_weight * weight_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub input_scale: f64,
    pub weight_scale: f64,
}

/// One GEMM layer. `weight` is stored transposed, `[in_dim × out_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub index: usize,
    pub name: String,
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub tokens: usize,
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub normalize_before: bool,
    pub quant: Option<QuantParams>,
}

impl LayerSpec {
    /// Multiply-accumulates of one forward pass through this layer.
    pub fn mac_count(&self) -> u64 {
        (self.tokens * self.in_dim * self.out_dim) as u64
    }

    pub fn is_integer(&self) -> bool {
        self.weight.dtype().is_integer()
    }

    /// Dtype of the raw GEMM output (the injection and verification target).
    pub fn output_dtype(&self) -> DType {
        if self.is_integer() {
            DType::I32
        } else {
            self.weight.dtype()
        }
    }

    /// Dtype of the GEMM input operand.
    pub fn input_dtype(&self) -> DType {
        self.weight.dtype()
    }
}

/// Multiply-accumulate count of a layer: `tokens × in_dim × out_dim`.
pub fn mac_count(layer: &LayerSpec) -> u64 {
    layer.mac_count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub input_dim: usize,
    pub dim: usize,
    pub tokens: usize,
    pub dtype: DType,
    pub seed: u64,
}

impl ModelGraph {
    pub fn blocks(&self) -> usize {
        self.layers.len().saturating_sub(2) / 4
    }

    pub fn head_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(LayerSpec::mac_count).sum()
    }

    /// GEMM accumulation precision. binary16 operands accumulate in binary32.
    pub fn accum(&self) -> Precision {
        match self.dtype {
            DType::F64 => Precision::F64,
            DType::F32 | DType::F16 => Precision::F32,
            DType::I8 | DType::I32 => Precision::I64Exact,
        }
    }

    /// Dtype of the values flowing between GEMMs (residual stream, norms,
    /// activations). Integer models dequantize to binary64 between layers.
    pub fn activation_dtype(&self) -> DType {
        if self.dtype.is_integer() {
            DType::F64
        } else {
            self.dtype
        }
    }

    /// Checks the structural invariants of the graph.
    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n < 6 || !(n - 2).is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!("{n} layers do not form embed + 4k block layers + head")));
        }
        let mut expected = vec![LayerKind::Embed];
        for _ in 0..(n - 2) / 4 {
            expected.extend([LayerKind::Qkv, LayerKind::AttnProj, LayerKind::MlpFc1, LayerKind::MlpFc2]);
        }
        expected.push(LayerKind::Head);
        let d = self.dim;
        for (i, (layer, kind)) in self.layers.iter().zip(&expected).enumerate() {
            if layer.index != i || layer.kind != *kind {
                return Err(Error::InvalidArgument(format!("layer {i} is {:?}, expected {kind:?}", layer.kind)));
            }
            let (in_dim, out_dim) = match kind {
                LayerKind::Embed => (self.input_dim, d),
                LayerKind::Qkv => (d, 3 * d),
                LayerKind::AttnProj => (d, d),
                LayerKind::MlpFc1 => (d, 4 * d),
                LayerKind::MlpFc2 => (4 * d, d),
                LayerKind::Head => (d, self.num_classes),
            };
            let tokens = if *kind == LayerKind::Head { 1 } else { self.tokens };
            if (layer.in_dim, layer.out_dim, layer.tokens) != (in_dim, out_dim, tokens) {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} ({kind:?}) has in={} out={} tokens={}, expected {in_dim}/{out_dim}/{tokens}",
                    layer.in_dim, layer.out_dim, layer.tokens
                )));
            }
            if (layer.weight.rows(), layer.weight.cols()) != (in_dim, out_dim) || layer.bias.len() != out_dim {
                return Err(Error::DimensionMismatch(format!("layer {i} weight/bias shape")));
            }
            if layer.weight.dtype() != self.dtype {
                return Err(Error::InvalidArgument(format!("layer {i} weight dtype differs from model dtype")));
            }
            if self.dtype.is_integer() != layer.quant.is_some() {
                return Err(Error::InvalidArgument(format!("layer {i}: quantization scales must exist iff integer")));
            }
        }
        Ok(())
    }
}

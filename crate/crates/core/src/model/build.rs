use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{forward, Activation, LayerKind, LayerSpec, ModelGraph, QuantParams, Tap};
use crate::error::{Error, Result};
use crate::numerics::{round_to_dtype, DType, Matrix};

/// Shape and seed of a synthetic model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub blocks: usize,
    pub dim: usize,
    pub tokens: usize,
    pub classes: usize,
    /// Width of an input token; defaults to `dim`.
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    pub seed: u64,
}

fn default_dtype() -> DType {
    DType::F64
}

/// Number of seeded inputs used to pick activation scales of integer models.
const QUANT_CALIBRATION_SAMPLES: u64 = 16;

impl ToyConfig {
    pub fn new(blocks: usize, dim: usize, tokens: usize, classes: usize, seed: u64) -> Self {
        Self { blocks, dim, tokens, classes, input_dim: None, dtype: DType::F64, seed }
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn with_input_dim(mut self, input_dim: usize) -> Self {
        self.input_dim = Some(input_dim);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim.unwrap_or(self.dim)
    }

    pub fn build(&self) -> Result<ModelGraph> {
        if self.blocks == 0 || self.dim == 0 || !self.dim.is_multiple_of(4) || self.classes < 2 || self.tokens == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid toy dims: blocks={} dim={} tokens={} classes={} (need blocks>=1, dim%4==0, classes>=2)",
                self.blocks, self.dim, self.tokens, self.classes
            )));
        }
        if self.input_dim() == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        match self.dtype {
            DType::I8 => self.build_int8(),
            DType::I32 => Err(Error::InvalidArgument("int32 weights are not supported; use int8".into())),
            float => Ok(self.build_float(float)),
        }
    }

    fn build_float(&self, dtype: DType) -> ModelGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let d = self.dim;
        let mut shapes = vec![(LayerKind::Embed, "embed".to_string(), self.input_dim(), d, Activation::None, false)];
        for b in 0..self.blocks {
            shapes.push((LayerKind::Qkv, format!("blocks.{b}.attn.qkv"), d, 3 * d, Activation::None, true));
            shapes.push((LayerKind::AttnProj, format!("blocks.{b}.attn.proj"), d, d, Activation::None, false));
            shapes.push((LayerKind::MlpFc1, format!("blocks.{b}.mlp.fc1"), d, 4 * d, Activation::Gelu, true));
            shapes.push((LayerKind::MlpFc2, format!("blocks.{b}.mlp.fc2"), 4 * d, d, Activation::None, false));
        }
        shapes.push((LayerKind::Head, "head".to_string(), d, self.classes, Activation::None, true));

        let layers = shapes
            .into_iter()
            .enumerate()
            .map(|(index, (kind, name, in_dim, out_dim, activation, normalize_before))| {
                let scale = 1.0 / (in_dim as f64).sqrt();
                let w: Vec<f64> = (0..in_dim * out_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .map(|v: f64| v * scale)
                    .collect();
                let bias: Vec<f64> = (0..out_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .map(|v: f64| round_to_dtype(0.1 * v, dtype))
                    .collect();
                LayerSpec {
                    index,
                    name,
                    kind,
                    in_dim,
                    out_dim,
                    tokens: if kind == LayerKind::Head { 1 } else { self.tokens },
                    weight: Matrix::from_f64_rounded(in_dim, out_dim, dtype, w).expect("shape is consistent"),
                    bias,
                    activation,
                    normalize_before,
                    quant: None,
                }
            })
            .collect();
        ModelGraph {
            layers,
            num_classes: self.classes,
            input_dim: self.input_dim(),
            dim: d,
            tokens: self.tokens,
            dtype,
            seed: self.seed,
        }
    }

    /// Symmetric per-tensor int8 quantization of the binary64 model with the
    /// same seed. Activation scales come from max-abs statistics of a few
    /// seeded inputs; weight columns whose int8 checksum would be zero are
    /// nudged by one unit so every input element is observable by the sum.
    fn build_int8(&self) -> Result<ModelGraph> {
        let reference = self.build_float(DType::F64);
        let mut max_abs = vec![0.0f64; reference.layers.len()];
        let calib = super::Dataset::synthetic_inputs(&reference, QUANT_CALIBRATION_SAMPLES, self.seed ^ 0x5eed);
        for input in &calib {
            let trace = forward(&reference, input, 0, &Tap::All)?;
            for (i, tap) in &trace.taps {
                max_abs[*i] = max_abs[*i].max(tap.input.max_abs());
            }
        }
        let mut model = reference;
        for layer in &mut model.layers {
            let w_max = layer.weight.max_abs().max(f64::MIN_POSITIVE);
            let weight_scale = w_max / 127.0;
            let input_scale = max_abs[layer.index].max(1e-6) / 127.0;
            let mut q: Vec<f64> = layer.weight.data().iter().map(|v| round_to_dtype(v / weight_scale, DType::I8)).collect();
            for k in 0..layer.in_dim {
                let row = &mut q[k * layer.out_dim..(k + 1) * layer.out_dim];
                if row.iter().sum::<f64>() == 0.0 {
                    if let Some(v) = row.iter_mut().find(|v| **v < 127.0) {
                        *v += 1.0;
                    }
                }
            }
            layer.weight = Matrix::new(layer.in_dim, layer.out_dim, DType::I8, q)?;
            let acc_scale = input_scale * weight_scale;
            layer.bias = layer.bias.iter().map(|b| round_to_dtype(b / acc_scale, DType::I32)).collect();
            layer.quant = Some(QuantParams { input_scale, weight_scale });
        }
        model.dtype = DType::I8;
        Ok(model)
    }
}

/// Builds the seeded toy model: 1 embed + 4 layers per block + 1 head,
/// weights drawn from N(0, 1/in_dim).
pub fn build_toy_model(blocks: usize, dim: usize, tokens: usize, classes: usize, seed: u64) -> Result<ModelGraph> {
    ToyConfig::new(blocks, dim, tokens, classes, seed).build()
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{forward, ModelGraph, Tap};
use crate::error::Result;
use crate::numerics::{round_to_dtype, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub input: Matrix,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Deterministic `tokens × input_dim` standard-normal inputs. Sample `i`
    /// draws from its own ChaCha stream, so prefixes are stable as `n` grows.
    pub fn synthetic_inputs(model: &ModelGraph, n: u64, seed: u64) -> Vec<Matrix> {
        (0..n).map(|id| synthetic_input(model, id, seed)).collect()
    }

    /// Synthetic dataset labeled by a fault-free pass of `model`, so every
    /// sample is classified correctly by construction.
    pub fn teacher_labeled(model: &ModelGraph, n: u64, seed: u64) -> Result<Self> {
        let samples = (0..n)
            .map(|id| {
                let input = synthetic_input(model, id, seed);
                let label = forward(model, &input, 0, &Tap::None)?.predicted_class;
                Ok(Sample { id, input, label })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples })
    }

    /// Shifts every label by `offset` classes (mod `classes`).
    pub fn relabel_shifted(&self, offset: usize, classes: usize) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| Sample { label: (s.label + offset) % classes, ..s.clone() })
                .collect(),
        }
    }
}

fn synthetic_input(model: &ModelGraph, id: u64, seed: u64) -> Matrix {
    let dtype = model.activation_dtype();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    let data = (0..model.tokens * model.input_dim)
        .map(|_| round_to_dtype(StandardNormal.sample(&mut rng), dtype))
        .collect();
    Matrix::new(model.tokens, model.input_dim, dtype, data).expect("rounded onto dtype lattice")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_toy_model;

    #[test]
    fn teacher_labels_match_forward() {
        let m = build_toy_model(1, 8, 3, 5, 3).unwrap();
        let d = Dataset::teacher_labeled(&m, 6, 9).unwrap();
        assert_eq!(d.len(), 6);
        for s in &d.samples {
            assert_eq!(forward(&m, &s.input, s.label, &Tap::None).unwrap().predicted_class, s.label);
        }
    }

    #[test]
    fn prefix_stable() {
        let m = build_toy_model(1, 8, 3, 5, 3).unwrap();
        let a = Dataset::synthetic_inputs(&m, 3, 1);
        let b = Dataset::synthetic_inputs(&m, 5, 1);
        assert!(a.iter().zip(&b).all(|(x, y)| x.bit_eq(y)));
        assert!(!b[3].bit_eq(&b[4]));
    }
}

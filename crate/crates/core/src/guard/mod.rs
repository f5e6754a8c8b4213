//! Checksum-based GEMM verification.
//!
//! For a layer `Y = X·Wt + b` the weight checksum `w_sum[k] = Σ_o Wt[k,o]`
//! is computed once. At run time every row of the batch is checked:
//! `predicted[b] = X[b,:]·w_sum + Σ_o b[o]` against `observed[b] = Σ_o Y[b,o]`.
//! Integer layers compare exactly; floating-point layers accept discrepancies
//! inside a calibrated interval.

mod calibrate;
mod evaluate;
mod protect;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelGraph};
use crate::numerics::{Matrix, Precision};
use crate::profiler::RangeProfile;

pub use calibrate::{calibrate_epsilon, collect_discrepancies, CalibrationStatistic, MIN_CALIBRATION_SAMPLES};
pub use evaluate::{
    clean_false_positives, evaluate_detection, write_detection_csv, write_threshold_csv, CleanPassStats,
    DetectionPoint, DetectionReport, DetectionTally,
};
pub use protect::{
    protected_forward, CorrectionKind, CorrectionPolicy, FaultProbe, GuardAction, GuardEvent, ProtectedExecutor,
    RowProbe,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightChecksum {
    pub layer_index: usize,
    pub w_sum: Vec<f64>,
    pub bias_sum: f64,
    pub precision: Precision,
}

/// Column checksum of the stored `Wt` and the bias sum, accumulated in
/// ascending output order in `p`.
pub fn offline_checksum(layer: &LayerSpec, p: Precision) -> Result<WeightChecksum> {
    let w = &layer.weight;
    if layer.is_integer() {
        if p != Precision::I64Exact {
            return Err(Error::IntegerOverflow(format!(
                "integer layer {} needs int64-exact checksums, got {p}",
                layer.index
            )));
        }
        let w_sum = (0..w.rows())
            .map(|k| w.row(k).iter().map(|v| *v as i64).sum::<i64>() as f64)
            .collect();
        let bias_sum = layer.bias.iter().map(|v| *v as i64).sum::<i64>() as f64;
        return Ok(WeightChecksum { layer_index: layer.index, w_sum, bias_sum, precision: p });
    }
    if !p.is_float() {
        return Err(Error::InvalidArgument(format!(
            "floating-point layer {} cannot use {p} checksums",
            layer.index
        )));
    }
    let sum = |xs: &[f64]| xs.iter().fold(0.0, |a, v| p.add(a, *v));
    Ok(WeightChecksum {
        layer_index: layer.index,
        w_sum: (0..w.rows()).map(|k| sum(w.row(k))).collect(),
        bias_sum: sum(&layer.bias),
        precision: p,
    })
}

/// Checksums for the given layers, each in its own precision.
pub fn offline_checksums(
    model: &ModelGraph,
    precisions: &BTreeMap<usize, Precision>,
) -> Result<BTreeMap<usize, WeightChecksum>> {
    precisions
        .iter()
        .map(|(i, p)| {
            let layer = model
                .layers
                .get(*i)
                .ok_or_else(|| Error::IndexOutOfRange(format!("layer {i}")))?;
            Ok((*i, offline_checksum(layer, *p)?))
        })
        .collect()
}

/// Fitted clean-run discrepancy distribution of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonModel {
    pub layer_index: usize,
    pub mu: f64,
    pub sigma: f64,
    pub confidence: f64,
    pub threshold_low: f64,
    pub threshold_high: f64,
    #[serde(rename = "n")]
    pub n_samples: usize,
    pub precision: Precision,
    /// Integer layers: any nonzero discrepancy triggers.
    #[serde(default)]
    pub exact: bool,
}

impl EpsilonModel {
    pub fn exact(layer_index: usize) -> Self {
        Self {
            layer_index,
            mu: 0.0,
            sigma: 0.0,
            confidence: 1.0,
            threshold_low: 0.0,
            threshold_high: 0.0,
            n_samples: 0,
            precision: Precision::I64Exact,
            exact: true,
        }
    }

    pub fn width(&self) -> f64 {
        self.threshold_high - self.threshold_low
    }

    /// NaN and infinite discrepancies always trigger.
    pub fn triggers(&self, d: f64) -> bool {
        if self.exact {
            d != 0.0
        } else {
            !(self.threshold_low <= d && d <= self.threshold_high)
        }
    }
}

/// Two-sided interval `mu ± z·sigma` with `z = Φ⁻¹((1 + confidence)/2)`.
pub fn threshold_from_confidence(mu: f64, sigma: f64, confidence: f64) -> Result<(f64, f64)> {
    if sigma.is_nan() || sigma < 0.0 || !(confidence > 0.5 && confidence < 1.0) || !mu.is_finite() || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "threshold needs sigma >= 0 and 0.5 < confidence < 1 (got sigma={sigma}, confidence={confidence})"
        )));
    }
    let z = crate::injector::two_sided_z(confidence);
    Ok((mu - z * sigma, mu + z * sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub layer_index: usize,
    /// `predicted[b] − observed[b]` per row.
    pub d: Vec<f64>,
    pub flagged: Vec<usize>,
    pub max_discrepancy: f64,
    pub triggered: bool,
}

/// Per-row `(predicted, observed)` in the checksum precision.
pub fn checksum_rows(x: &Matrix, y: &Matrix, chk: &WeightChecksum) -> Result<Vec<(f64, f64)>> {
    if x.cols() != chk.w_sum.len() || x.rows() != y.rows() {
        return Err(Error::DimensionMismatch(format!(
            "layer {}: X is {}x{}, Y is {}x{}, checksum has {} entries",
            chk.layer_index,
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols(),
            chk.w_sum.len()
        )));
    }
    let p = chk.precision;
    Ok((0..x.rows())
        .map(|b| {
            if p == Precision::I64Exact {
                let pred: i64 = x
                    .row(b)
                    .iter()
                    .zip(&chk.w_sum)
                    .map(|(xv, w)| *xv as i64 * *w as i64)
                    .sum::<i64>()
                    + chk.bias_sum as i64;
                let obs: i64 = y.row(b).iter().map(|v| *v as i64).sum();
                (pred as f64, obs as f64)
            } else {
                let dot = x
                    .row(b)
                    .iter()
                    .zip(&chk.w_sum)
                    .fold(0.0, |a, (xv, w)| p.add(a, p.mul(*xv, *w)));
                let pred = p.add(dot, chk.bias_sum);
                let obs = y.row(b).iter().fold(0.0, |a, v| p.add(a, *v));
                (pred, obs)
            }
        })
        .collect())
}

/// Per-row discrepancies `predicted − observed`.
pub fn discrepancies(x: &Matrix, y: &Matrix, chk: &WeightChecksum) -> Result<Vec<f64>> {
    let p = chk.precision;
    Ok(checksum_rows(x, y, chk)?
        .into_iter()
        .map(|(pred, obs)| if p == Precision::I64Exact { pred - obs } else { p.add(pred, -obs) })
        .collect())
}

/// Verifies a layer output against its checksum. `eps` is required for
/// floating-point layers and ignored for integer ones.
pub fn verify_layer(x: &Matrix, y: &Matrix, chk: &WeightChecksum, eps: Option<&EpsilonModel>) -> Result<DetectionOutcome> {
    let d = discrepancies(x, y, chk)?;
    let exact;
    let eps = if chk.precision == Precision::I64Exact {
        exact = EpsilonModel::exact(chk.layer_index);
        &exact
    } else {
        eps.ok_or(Error::MissingEpsilon { layer: chk.layer_index })?
    };
    let flagged: Vec<usize> = (0..d.len()).filter(|b| eps.triggers(d[*b])).collect();
    let max_discrepancy = d.iter().fold(0.0f64, |m, v| if v.abs() > m || v.is_nan() { v.abs() } else { m });
    Ok(DetectionOutcome {
        layer_index: chk.layer_index,
        triggered: !flagged.is_empty(),
        flagged,
        max_discrepancy,
        d,
    })
}

/// Largest magnitude a checksum of the layer can reach.
fn checksum_magnitude(layer: &LayerSpec, max_x: f64, max_y: f64) -> f64 {
    let (i, o) = (layer.in_dim as f64, layer.out_dim as f64);
    let max_w = layer.weight.max_abs();
    let max_b = layer.bias.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (i * o * max_x * max_w + o * max_b).max(o * max_y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionChoice {
    pub precision: Precision,
    /// Set when even binary64 fails the error budget.
    pub warning: Option<String>,
}

/// Smallest float precision whose worst-case magnitude stays below 2^-10 of
/// its largest finite value and whose accumulated rounding bound stays below
/// 1e-3 of the observed output span.
pub fn choose_precision_for(magnitude: f64, error_at_unit: f64, span: f64) -> PrecisionChoice {
    for p in [Precision::F16, Precision::F32, Precision::F64] {
        let fits = magnitude < p.max_finite() * 2f64.powi(-10);
        let precise = error_at_unit * p.unit_roundoff() < 1e-3 * span;
        if fits && precise {
            return PrecisionChoice { precision: p, warning: None };
        }
    }
    PrecisionChoice {
        precision: Precision::F64,
        warning: Some(format!(
            "no precision meets the error budget (magnitude {magnitude:e}, span {span:e}); using binary64"
        )),
    }
}

/// Per-layer checksum precision from weight magnitudes and profiled ranges.
/// Integer layers always use int64-exact accumulation.
pub fn choose_checksum_precision(model: &ModelGraph, ranges: &RangeProfile) -> Result<BTreeMap<usize, PrecisionChoice>> {
    model
        .layers
        .iter()
        .map(|layer| {
            if layer.is_integer() {
                return Ok((layer.index, PrecisionChoice { precision: Precision::I64Exact, warning: None }));
            }
            let r = ranges
                .get(layer.index)
                .ok_or_else(|| Error::InvalidArgument(format!("no range profile for layer {}", layer.index)))?;
            let max_x = r.input_min.abs().max(r.input_max.abs());
            let max_y = r.min.abs().max(r.max.abs());
            let magnitude = checksum_magnitude(layer, max_x, max_y);
            let n = (layer.in_dim + layer.out_dim) as f64;
            Ok((layer.index, choose_precision_for(magnitude, n * magnitude, r.max - r.min)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_toy_model, Activation, LayerKind};
    use crate::numerics::{gemm, DType};

    fn layer(wt: Matrix, bias: Vec<f64>) -> LayerSpec {
        LayerSpec {
            index: 0,
            name: "t".into(),
            kind: LayerKind::AttnProj,
            in_dim: wt.rows(),
            out_dim: wt.cols(),
            tokens: 1,
            weight: wt,
            bias,
            activation: Activation::None,
            normalize_before: false,
            quant: None,
        }
    }

    #[test]
    fn offline_examples() {
        let l = layer(Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]], DType::F64).unwrap(), vec![1.0, 1.0]);
        let c = offline_checksum(&l, Precision::F64).unwrap();
        assert_eq!(c.w_sum, vec![3.0, 7.0]);
        assert_eq!(c.bias_sum, 2.0);
        let z = layer(Matrix::zeros(3, 2, DType::F64), vec![0.0; 2]);
        let c = offline_checksum(&z, Precision::F32).unwrap();
        assert!(c.w_sum.iter().all(|v| *v == 0.0) && c.bias_sum == 0.0);
    }

    #[test]
    fn int8_checksum_is_exact_and_requires_int64() {
        let w = Matrix::new(2, 1024, DType::I8, vec![127.0; 2048]).unwrap();
        let l = layer(w, vec![0.0; 1024]);
        let c = offline_checksum(&l, Precision::I64Exact).unwrap();
        assert_eq!(c.w_sum, vec![130_048.0; 2]);
        assert!(matches!(offline_checksum(&l, Precision::F32), Err(Error::IntegerOverflow(_))));
    }

    #[test]
    fn verify_examples() {
        let wt = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]], DType::F64).unwrap();
        let l = layer(wt.clone(), vec![1.0, 1.0]);
        let chk = offline_checksum(&l, Precision::F64).unwrap();
        let eps = EpsilonModel {
            layer_index: 0,
            mu: 0.0,
            sigma: 1e-12,
            confidence: 0.9999,
            threshold_low: -1e-11,
            threshold_high: 1e-11,
            n_samples: 30,
            precision: Precision::F64,
            exact: false,
        };
        let x = Matrix::from_rows(&[&[1.0, 1.0]], DType::F64).unwrap();
        let y = gemm(&x, &wt, Some(&l.bias), Precision::F64).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let out = verify_layer(&x, &y, &chk, Some(&eps)).unwrap();
        assert_eq!(out.d, vec![0.0]);
        assert!(!out.triggered);

        let mut bad = y.clone();
        bad.set_flat(1, 7.0 + 1024.0).unwrap();
        let out = verify_layer(&x, &bad, &chk, Some(&eps)).unwrap();
        assert_eq!(out.d, vec![-1024.0]);
        assert!(out.triggered && out.flagged == vec![0]);

        assert!(matches!(verify_layer(&x, &y, &chk, None), Err(Error::MissingEpsilon { layer: 0 })));
        let zl = layer(wt, vec![0.0, 0.0]);
        let zchk = offline_checksum(&zl, Precision::F64).unwrap();
        let zx = Matrix::zeros(1, 2, DType::F64);
        let zy = Matrix::zeros(1, 2, DType::F64);
        assert_eq!(discrepancies(&zx, &zy, &zchk).unwrap(), vec![0.0]);
    }

    #[test]
    fn thresholds() {
        let (lo, hi) = threshold_from_confidence(0.0, 1.0, 0.9999).unwrap();
        assert!((hi - 3.8906).abs() < 1e-4 && (lo + 3.8906).abs() < 1e-4);
        let (lo, hi) = threshold_from_confidence(1.0, 2.0, 0.95).unwrap();
        assert!((lo + 2.92).abs() < 1e-2 && (hi - 4.92).abs() < 1e-2);
        assert_eq!(threshold_from_confidence(3.0, 0.0, 0.99).unwrap(), (3.0, 3.0));
        assert!(threshold_from_confidence(0.0, -1.0, 0.9).is_err());
        assert!(threshold_from_confidence(0.0, 1.0, 0.4).is_err());
    }

    #[test]
    fn precision_choice() {
        // 16x16 layer, |values| <= 1, output span 2
        let (i, o) = (16.0, 16.0);
        let magnitude = i * o + o;
        let c = choose_precision_for(magnitude, (i + o) * magnitude, 2.0);
        assert_eq!(c.precision, Precision::F32);
        // a million-wide layer near the binary16 maximum
        let m = 1e6 * 1e6 * 65504.0 * 65504.0;
        let c = choose_precision_for(m, 2e6 * m, 2.0 * 65504.0);
        assert_eq!(c.precision, Precision::F64);
        assert!(c.warning.is_some());
    }

    #[test]
    fn int_model_maps_to_exact() {
        let m = crate::model::ToyConfig::new(1, 8, 2, 3, 1).with_dtype(DType::I8).build().unwrap();
        let d = crate::model::Dataset::teacher_labeled(&m, 4, 0).unwrap();
        let r = crate::profiler::profile_ranges(&m, &d).unwrap();
        let c = choose_checksum_precision(&m, &r).unwrap();
        assert!(c.values().all(|p| p.precision == Precision::I64Exact));
        let f = build_toy_model(1, 8, 2, 3, 1).unwrap();
        let d = crate::model::Dataset::teacher_labeled(&f, 4, 0).unwrap();
        let r = crate::profiler::profile_ranges(&f, &d).unwrap();
        assert!(choose_checksum_precision(&f, &r).unwrap().values().all(|p| p.precision.is_float()));
    }
}

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{discrepancies, threshold_from_confidence, EpsilonModel, WeightChecksum};
use crate::error::{Error, Result};
use crate::model::{forward, Dataset, ModelGraph, Tap};
use crate::numerics::Precision;
use crate::profiler::GoldenSet;

pub const MIN_CALIBRATION_SAMPLES: usize = 30;

/// Which clean-run statistic the discrepancy distribution is fitted to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationStatistic {
    /// Every row discrepancy, the quantity tested at run time.
    #[default]
    PerSample,
    /// Mean discrepancy over the rows of each inference.
    BatchAverage,
}

/// Clean-run discrepancies: `layer -> inference -> row`.
pub fn collect_discrepancies(
    model: &ModelGraph,
    dataset: &Dataset,
    golden: &GoldenSet,
    checksums: &BTreeMap<usize, WeightChecksum>,
) -> Result<BTreeMap<usize, Vec<Vec<f64>>>> {
    let pairs = golden.samples(dataset)?;
    let tap = Tap::Layers(checksums.keys().copied().collect::<BTreeSet<_>>());
    let per_inference = pairs
        .par_iter()
        .map(|(_, s)| {
            let trace = forward(model, &s.input, s.label, &tap)?;
            checksums
                .iter()
                .map(|(i, chk)| {
                    let t = &trace.taps[i];
                    discrepancies(&t.input, &t.output, chk)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: BTreeMap<usize, Vec<Vec<f64>>> = checksums.keys().map(|i| (*i, Vec::new())).collect();
    for inference in per_inference {
        for ((_, rows), d) in out.iter_mut().zip(inference) {
            rows.push(d);
        }
    }
    Ok(out)
}

/// Fits a normal discrepancy model per layer over fault-free passes of the
/// golden set and derives two-sided thresholds at `confidence`.
pub fn calibrate_epsilon(
    model: &ModelGraph,
    dataset: &Dataset,
    golden: &GoldenSet,
    checksums: &BTreeMap<usize, WeightChecksum>,
    confidence: f64,
    statistic: CalibrationStatistic,
) -> Result<BTreeMap<usize, EpsilonModel>> {
    if golden.is_empty() {
        return Err(Error::EmptyGoldenSet);
    }
    let collected = collect_discrepancies(model, dataset, golden, checksums)?;
    collected
        .into_iter()
        .map(|(layer, rows)| {
            let precision = checksums[&layer].precision;
            if precision == Precision::I64Exact {
                if let Some(v) = rows.iter().flatten().find(|v| **v != 0.0) {
                    return Err(Error::PrecisionSaturation { layer, value: *v });
                }
                return Ok((layer, EpsilonModel { n_samples: rows.iter().map(Vec::len).sum(), ..EpsilonModel::exact(layer) }));
            }
            let samples: Vec<f64> = match statistic {
                CalibrationStatistic::PerSample => rows.into_iter().flatten().collect(),
                CalibrationStatistic::BatchAverage => rows
                    .iter()
                    .map(|r| r.iter().sum::<f64>() / r.len() as f64)
                    .collect(),
            };
            Ok((layer, fit(layer, &samples, confidence, precision)?))
        })
        .collect()
}

fn fit(layer: usize, samples: &[f64], confidence: f64, precision: Precision) -> Result<EpsilonModel> {
    let n = samples.len();
    if n < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InsufficientSamples { layer, n, min: MIN_CALIBRATION_SAMPLES });
    }
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::PrecisionSaturation { layer, value: *v });
    }
    let mu = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / (n - 1) as f64;
    let sigma = var.sqrt();
    if sigma == 0.0 && mu != 0.0 {
        return Err(Error::PrecisionSaturation { layer, value: mu });
    }
    let (threshold_low, threshold_high) = threshold_from_confidence(mu, sigma, confidence)?;
    Ok(EpsilonModel {
        layer_index: layer,
        mu,
        sigma,
        confidence,
        threshold_low,
        threshold_high,
        n_samples: n,
        precision,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::offline_checksums;
    use crate::model::{build_toy_model, ToyConfig};
    use crate::numerics::DType;
    use crate::profiler::select_golden;

    fn all_layers(model: &ModelGraph, p: Precision) -> BTreeMap<usize, Precision> {
        (0..model.layers.len()).map(|i| (i, p)).collect()
    }

    #[test]
    fn integer_model_is_exact() {
        let m = ToyConfig::new(1, 8, 3, 4, 2).with_dtype(DType::I8).build().unwrap();
        let d = Dataset::teacher_labeled(&m, 12, 0).unwrap();
        let g = select_golden(&m, &d).unwrap();
        let chks = offline_checksums(&m, &all_layers(&m, Precision::I64Exact)).unwrap();
        let eps = calibrate_epsilon(&m, &d, &g, &chks, 0.9999, CalibrationStatistic::PerSample).unwrap();
        assert!(eps.values().all(|e| e.exact && e.mu == 0.0 && e.sigma == 0.0));
    }

    #[test]
    fn fit_matches_direct_recollection() {
        let m = ToyConfig::new(1, 16, 4, 4, 3).with_dtype(DType::F16).build().unwrap();
        let d = Dataset::teacher_labeled(&m, 40, 0).unwrap();
        let g = select_golden(&m, &d).unwrap();
        let chks = offline_checksums(&m, &all_layers(&m, Precision::F64)).unwrap();
        let eps = calibrate_epsilon(&m, &d, &g, &chks, 0.9999, CalibrationStatistic::PerSample).unwrap();
        for (layer, e) in &eps {
            // independent re-collection: straight sums over a fresh tapped pass
            let mut ds = Vec::new();
            for mbr in &g.members {
                let s = d.get(mbr.sample_id).unwrap();
                let t = forward(&m, &s.input, s.label, &Tap::layer(*layer)).unwrap();
                let tap = &t.taps[layer];
                let w = &m.layers[*layer].weight;
                for b in 0..tap.input.rows() {
                    let mut pred = 0.0;
                    for k in 0..w.rows() {
                        let ws: f64 = w.row(k).iter().sum();
                        pred += tap.input.get(b, k) * ws;
                    }
                    pred += m.layers[*layer].bias.iter().sum::<f64>();
                    ds.push(pred - tap.output.row(b).iter().sum::<f64>());
                }
            }
            let n = ds.len() as f64;
            let mu = ds.iter().sum::<f64>() / n;
            let sigma = (ds.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert_eq!(e.n_samples, ds.len());
            assert!((e.mu - mu).abs() <= 1e-12 * sigma.max(mu.abs()), "layer {layer}");
            assert!((e.sigma - sigma).abs() <= 1e-12 * sigma, "layer {layer}");
        }
    }

    #[test]
    fn too_few_samples() {
        let m = build_toy_model(1, 8, 1, 4, 2).unwrap();
        let d = Dataset::teacher_labeled(&m, 10, 0).unwrap();
        let g = select_golden(&m, &d).unwrap();
        let chks = offline_checksums(&m, &all_layers(&m, Precision::F64)).unwrap();
        let err = calibrate_epsilon(&m, &d, &g, &chks, 0.99, CalibrationStatistic::PerSample);
        assert!(matches!(err, Err(Error::InsufficientSamples { min: 30, .. })));
    }

    #[test]
    fn saturation_detected() {
        assert!(matches!(fit(0, &[0.5; 40], 0.99, Precision::F32), Err(Error::PrecisionSaturation { .. })));
        let z = fit(0, &[0.0; 40], 0.99, Precision::F32).unwrap();
        assert_eq!((z.threshold_low, z.threshold_high), (0.0, 0.0));
    }
}

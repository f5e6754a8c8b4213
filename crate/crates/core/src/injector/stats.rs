use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided z value for `confidence`.
pub(crate) fn two_sided_z(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf((1.0 + confidence) / 2.0)
}

/// Half-width of the normal-approximation confidence interval of a
/// proportion `p` estimated from `n` trials.
pub fn margin_of_error(n: u64, p: f64, confidence: f64) -> Result<f64> {
    if n == 0 || !(p > 0.0 && p < 1.0) || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "margin_of_error needs n >= 1, 0 < p < 1, 0 < confidence < 1 (got n={n}, p={p}, confidence={confidence})"
        )));
    }
    Ok(two_sided_z(confidence) * (p * (1.0 - p) / n as f64).sqrt())
}

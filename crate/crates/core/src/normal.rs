//! Standard normal CDF and quantile.

use statrs::distribution::{ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::standard()
}

pub fn cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// Inverse of [`cdf`] for `p ∈ (0, 1)`; returns ±∞ at the endpoints and NaN outside.
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    standard().inverse_cdf(p)
}

/// Two-sided critical value `z_{(1−level)/2}`.
pub fn two_sided(level: f64) -> f64 {
    quantile(1.0 - (1.0 - level) / 2.0)
}

//! Standard normal CDF and its logarithm.
//!
//! Both are built on `libm::erfc`, which is accurate to about one ulp over the
//! whole real line. For very negative arguments `erfc` underflows, so the log
//! CDF switches to the asymptotic Mills-ratio expansion there.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Below this argument `log_normal_cdf` uses the asymptotic series.
const ASYMPTOTIC_CUTOFF: f64 = -30.0;

/// Φ(z), the standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// ln Φ(z), finite for every finite `z`.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z >= ASYMPTOTIC_CUTOFF {
        normal_cdf(z).ln()
    } else {
        log_cdf_asymptotic(z)
    }
}

fn log_cdf_asymptotic(z: f64) -> f64 {
    // Φ(z) = φ(z)/|z| · (1 − 1/z² + 3/z⁴ − 15/z⁶ + ...)
    let z2 = z * z;
    let inv = 1.0 / z2;
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..=8 {
        term *= -((2 * k - 1) as f64) * inv;
        series += term;
    }
    -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

//! Standard normal density, distribution and quantile functions.
//!
//! The distribution function is evaluated through the complementary error
//! function, which keeps full relative precision in the lower tail.

use libm::erfc;
use statrs::function::erf::erfc_inv;

/// `1/sqrt(2*pi)`, the supremum of the standard normal density.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Clamp bound applied to probabilities before they enter a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, `0.5 * erfc(-x / sqrt 2)`.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function for `p` in `(0, 1)`.
///
/// Works on the lower tail (`p <= 0.5`) and mirrors, then polishes the
/// rational-approximation start with one Halley step against [`cdf`].
pub fn quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile argument {p} outside (0,1)");
    if p > 0.5 {
        return -quantile(1.0 - p);
    }
    if p == 0.5 {
        return 0.0;
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    let f = pdf(x);
    if f == 0.0 {
        return x;
    }
    let u = (cdf(x) - p) / f;
    x - u / (1.0 + 0.5 * x * u)
}

/// Clamp a probability into `[bound, 1 - bound]`.
#[inline]
pub fn clamp_prob(p: f64, bound: f64) -> f64 {
    p.clamp(bound, 1.0 - bound)
}

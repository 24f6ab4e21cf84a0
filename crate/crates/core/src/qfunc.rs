//! Gaussian tail function and its inverse.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// `Q(x) = P[Z > x]` for a standard normal `Z`.
pub fn q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `x` such that `Q(x) = p`, for `0 < p < 1`.
pub fn q_inverse(p: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    -normal.inverse_cdf(p)
}

/// Pairwise error probability `Q(√(d²/(2 N0)))` between two points at
/// squared distance `d2` in noise of spectral density `n0`.
pub fn pairwise_error(d2: f64, n0: f64) -> f64 {
    q((d2 / (2.0 * n0)).sqrt())
}

//! Discretized Laplace likelihoods.
//!
//! An integer symbol n is assigned the mass the Laplace density places on
//! [n - 1/2, n + 1/2], i.e. the box probability F(n + 1/2) - F(n - 1/2).

use crate::error::{Error, Result};

/// Laplace scales below this floor are rejected.
pub const SCALE_FLOOR: f64 = 1e-6;
/// Coding probability floor: 2^-64.
pub const PROB_FLOOR: f64 = 5.421010862427522e-20;

/// Laplace CDF with location mu and scale b.
pub fn laplace_cdf(x: f64, mu: f64, b: f64) -> f64 {
    let z = (x - mu) / b;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

/// Box probability of integer n, clamped below at [`PROB_FLOOR`].
pub fn laplace_box_prob(n: i32, mu: f64, b: f64) -> Result<f64> {
    if !(b >= SCALE_FLOOR) {
        return Err(Error::InvalidParams(format!(
            "laplace scale {b} below floor {SCALE_FLOOR}"
        )));
    }
    if !mu.is_finite() {
        return Err(Error::InvalidParams("non-finite laplace mean".into()));
    }
    let x = n as f64;
    let p = laplace_cdf(x + 0.5, mu, b) - laplace_cdf(x - 0.5, mu, b);
    Ok(p.max(PROB_FLOOR))
}

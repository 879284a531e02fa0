//! Zero-order-hold discretization of a diagonal linear system.
//!
//! With the input held constant over a step of length `dt`:
//!
//! ```text
//! a_bar = exp(dt * a)
//! b_bar = (exp(dt * a) - 1) / a * b  =  dt * phi1(dt * a) * b
//! ```
//!
//! where `phi1(z) = (e^z - 1) / z`, continuous at `z = 0` with `phi1(0) = 1`.

use crate::error::{Error, Result};

/// Below this `|dt * a|` the input coefficient collapses to `dt * b`.
pub const SERIES_LIMIT: f64 = 1e-8;

/// `phi1(z) = (e^z - 1) / z`, given `ez = e^z` already evaluated.
#[inline]
pub(crate) fn phi1(z: f64, ez: f64) -> f64 {
    let az = z.abs();
    if az < SERIES_LIMIT {
        1.0
    } else if az < 1e-3 {
        1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))
    } else {
        (ez - 1.0) / z
    }
}

/// `d phi1 / dz = (e^z (z - 1) + 1) / z^2`.
#[inline]
pub(crate) fn phi1_prime(z: f64, ez: f64) -> f64 {
    if z.abs() < 1e-2 {
        0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0 + z / 840.0))))
    } else {
        (ez * (z - 1.0) + 1.0) / (z * z)
    }
}

/// Input coefficient `dt * phi1(dt * a)` such that `b_bar = coeff * b`.
#[inline]
pub(crate) fn input_coefficient(dt: f64, z: f64, a_bar: f64) -> f64 {
    dt * phi1(z, a_bar)
}

/// Discretizes diagonal `a` and input vector `b` with step `dt`.
pub fn discretize_zoh(a: &[f64], b: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::NonPositiveStep(dt));
    }
    if a.len() != b.len() {
        return Err(Error::shape("discretize_zoh", format!("A has {} entries, B has {}", a.len(), b.len())));
    }
    let mut a_bar = Vec::with_capacity(a.len());
    let mut b_bar = Vec::with_capacity(a.len());
    for (&ai, &bi) in a.iter().zip(b) {
        let z = dt * ai;
        let ab = z.exp();
        a_bar.push(ab);
        b_bar.push(input_coefficient(dt, z, ab) * bi);
    }
    Ok((a_bar, b_bar))
}

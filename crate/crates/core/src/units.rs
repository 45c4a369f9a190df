//! Physical constants and unit conversions.

use std::f64::consts::PI;

/// Reduced Planck constant (J s), CODATA 2018 exact.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant (J/K), exact.
pub const K_B: f64 = 1.380_649e-23;

#[inline]
pub fn hz_to_angular(f_hz: f64) -> f64 {
    2.0 * PI * f_hz
}

#[inline]
pub fn angular_to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Power ratio in dB to a linear factor.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Squeezing of a quadrature variance relative to vacuum, in dB.
/// Negative values are below vacuum.
#[inline]
pub fn variance_to_db(variance: f64) -> f64 {
    linear_to_db(2.0 * variance)
}

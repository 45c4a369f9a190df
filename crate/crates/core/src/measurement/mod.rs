//! Emulation of the two-channel heterodyne detection chain and the
//! statistics used to turn digitized records into covariance matrices.

mod angle;
mod dsp;
mod estimate;
mod records;
mod sampler;

use serde::{Deserialize, Serialize};

use crate::units::{db_to_linear, hz_to_angular, HBAR};
use crate::{Error, Result};

pub use angle::{optimize_angles, optimize_detector_angle, optimize_epr_angle, optimize_port_angle, AngleMode, AngleOptimum, MIN_GRID_POINTS};
pub use dsp::{bessel_i0, scale_to_quanta, synthesize_if_noise, unscale_from_quanta, Downconverter, IqSamples};
pub use estimate::{estimate_covariance, on_off_subtract, BlockSums, CovarianceEstimate, SubtractedMoments, JACKKNIFE_BLOCKS};
pub use records::{PumpState, QuadratureRecords};
pub use sampler::{derive_seed, sample_pump_off, sample_quadratures, SampleRole, CHUNK_SIZE};

/// One amplification and digitization chain, referred to the device output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Total power gain (dB).
    pub gain_db: f64,
    /// Input-referred added noise (quanta per quadrature).
    pub n_add: f64,
    /// Two-sided measurement bandwidth (Hz).
    pub bandwidth: f64,
    /// Load impedance (Ω).
    pub impedance: f64,
    /// Signal frequency (rad/s).
    pub omega_a: f64,
    /// Intermediate frequency (rad/s).
    pub omega_if: f64,
    /// Digitizer sample rate (Hz).
    pub sample_rate: f64,
}

impl ChainParams {
    fn reference(gain_db: f64, n_add: f64) -> Self {
        Self {
            gain_db,
            n_add,
            bandwidth: 200e3,
            impedance: 50.0,
            omega_a: hz_to_angular(7.147e9),
            omega_if: hz_to_angular(20e6),
            sample_rate: 100e6,
        }
    }

    /// Calibrated chain of output 1: 99.22 dB, 7.51 added quanta.
    pub fn reference_port1() -> Self {
        Self::reference(99.22, 7.51)
    }

    /// Calibrated chain of output 2: 94.02 dB, 14.80 added quanta.
    pub fn reference_port2() -> Self {
        Self::reference(94.02, 14.80)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gain_db.is_finite() {
            return Err(Error::Validation(format!("gain_db = {} must be finite", self.gain_db)));
        }
        if !self.n_add.is_finite() || self.n_add < 0.0 {
            return Err(Error::Validation(format!("n_add = {} must be ≥ 0", self.n_add)));
        }
        for (name, v) in [
            ("impedance", self.impedance),
            ("omega_a", self.omega_a),
            ("sample_rate", self.sample_rate),
            ("bandwidth", self.bandwidth),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!("{name} = {v} must be positive")));
            }
        }
        let nyquist = 0.5 * self.sample_rate;
        if self.bandwidth >= nyquist {
            return Err(Error::Configuration(format!(
                "bandwidth {} Hz is not below the Nyquist frequency {nyquist} Hz",
                self.bandwidth
            )));
        }
        if !(self.omega_if >= 0.0) || self.omega_if >= std::f64::consts::PI * self.sample_rate {
            return Err(Error::Configuration(format!(
                "intermediate frequency {} Hz must lie in [0, {nyquist}) Hz",
                self.if_hz()
            )));
        }
        Ok(())
    }

    pub fn gain_linear(&self) -> f64 {
        db_to_linear(self.gain_db)
    }

    pub fn if_hz(&self) -> f64 {
        self.omega_if / (2.0 * std::f64::consts::PI)
    }

    /// Voltage corresponding to one unit of scaled quadrature,
    /// `√(2ħω_a B R G)`.
    pub fn quadrature_scale(&self) -> f64 {
        (2.0 * HBAR * self.omega_a * self.bandwidth * self.impedance * self.gain_linear()).sqrt()
    }

    /// Per-sample variance (V²) of white digitizer noise that carries
    /// `quanta` of quadrature noise after down-conversion and scaling.
    pub fn if_noise_variance(&self, quanta: f64) -> f64 {
        self.gain_linear() * HBAR * self.omega_a * self.impedance * self.sample_rate * quanta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_chains_are_valid() {
        ChainParams::reference_port1().validate().unwrap();
        ChainParams::reference_port2().validate().unwrap();
    }

    #[test]
    fn aliasing_configurations_rejected() {
        let mut c = ChainParams::reference_port1();
        c.bandwidth = 60e6;
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        let mut c = ChainParams::reference_port1();
        c.omega_if = hz_to_angular(60e6);
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        let mut c = ChainParams::reference_port1();
        c.n_add = -1.0;
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
    }
}

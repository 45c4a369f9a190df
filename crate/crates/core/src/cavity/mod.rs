//! Pumped two-sided kinetic-inductance resonator.
//!
//! A single resonator mode `a` (frequency `ω_a`) is coupled to two
//! waveguides at rates `κ_e,1`, `κ_e,2` and to an internal bath at `κ_i`,
//! and driven by a degenerate three-wave-mixing pump of strength `g` and
//! phase `φ_p`. In the frame rotating at half the pump frequency the
//! Langevin equations are linear, and each output field is
//!
//! ```text
//! a_out,j = G_S,j a_e,j + G_I,j a_e,j†
//!         + Σ_{k≠j} √(κ_k/κ_e,j) [(G_S,j + 1) a_k + G_I,j a_k†]
//! ```
//!
//! with the gains
//!
//! ```text
//! G_S,j(ω) = η_j κ (κ/2 − i(ω+Δ)) / D − 1
//! G_I,j(ω) = −i η_j κ g e^{iφ_p} / D
//! D        = Δ² − g² + (iω − κ/2)²
//! ```
//!
//! and `η_j = κ_e,j / κ`. All rates and frequencies are angular.

mod sweep_fit;

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::gaussian::CovarianceMatrix2M;
use crate::units::hz_to_angular;
use crate::{Error, Result};

pub use sweep_fit::{
    fit_pump_sweep, predict as predict_sweep, HeatingModel, HeatingOrder, Observable, PumpSweepFit,
    SweepFitOptions,
    SweepObservation,
};

/// Threshold on `|D|/κ²` below which the response is treated as singular.
const SINGULAR_DENOMINATOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Port {
    pub const BOTH: [Port; 2] = [Port::One, Port::Two];

    pub fn index(self) -> usize {
        match self {
            Port::One => 0,
            Port::Two => 1,
        }
    }

    pub fn other(self) -> Port {
        match self {
            Port::One => Port::Two,
            Port::Two => Port::One,
        }
    }

    pub fn from_number(n: u8) -> Result<Port> {
        match n {
            1 => Ok(Port::One),
            2 => Ok(Port::Two),
            _ => Err(Error::Validation(format!("port must be 1 or 2, got {n}"))),
        }
    }
}

/// Physical resonator parameters. Rates in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    pub omega_a: f64,
    pub kappa_e1: f64,
    pub kappa_e2: f64,
    pub kappa_i: f64,
    /// Thermal occupancy of the port-1 input waveguide.
    pub n_e1: f64,
    pub n_e2: f64,
    /// Thermal occupancy of the internal loss bath.
    pub n_i: f64,
}

impl ResonatorParams {
    /// Vacuum inputs everywhere; arguments are `ω/2π`-style frequencies in Hz.
    pub fn from_hz(f_a: f64, kappa_e1_hz: f64, kappa_e2_hz: f64, kappa_i_hz: f64) -> Result<Self> {
        let p = Self {
            omega_a: hz_to_angular(f_a),
            kappa_e1: hz_to_angular(kappa_e1_hz),
            kappa_e2: hz_to_angular(kappa_e2_hz),
            kappa_i: hz_to_angular(kappa_i_hz),
            n_e1: 0.0,
            n_e2: 0.0,
            n_i: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// The measured ring resonator: 7.147 GHz, κ_e/2π = 19.4 and 13.2 MHz,
    /// κ_i/2π = 3 MHz.
    pub fn reference_device() -> Self {
        Self::from_hz(7.147e9, 19.4e6, 13.2e6, 3.0e6).expect("reference device is valid")
    }

    /// Lossless device with the given couplings expressed as fractions of κ.
    pub fn from_couplings(eta_1: f64, eta_2: f64) -> Result<Self> {
        let kappa = hz_to_angular(1e6);
        let p = Self {
            omega_a: hz_to_angular(7e9),
            kappa_e1: eta_1 * kappa,
            kappa_e2: eta_2 * kappa,
            kappa_i: (1.0 - eta_1 - eta_2).max(0.0) * kappa,
            n_e1: 0.0,
            n_e2: 0.0,
            n_i: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_occupancies(mut self, n_e1: f64, n_e2: f64, n_i: f64) -> Result<Self> {
        self.n_e1 = n_e1;
        self.n_e2 = n_e2;
        self.n_i = n_i;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("omega_a", self.omega_a),
            ("kappa_e1", self.kappa_e1),
            ("kappa_e2", self.kappa_e2),
            ("kappa_i", self.kappa_i),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("{name} = {v} must be finite and ≥ 0")));
            }
        }
        if !(self.kappa() > 0.0) {
            return Err(Error::Validation("total damping κ must be positive".into()));
        }
        for (name, v) in [("n_e1", self.n_e1), ("n_e2", self.n_e2), ("n_i", self.n_i)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("{name} = {v} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa_e1 + self.kappa_e2 + self.kappa_i
    }

    pub fn kappa_e(&self, port: Port) -> f64 {
        match port {
            Port::One => self.kappa_e1,
            Port::Two => self.kappa_e2,
        }
    }

    pub fn n_e(&self, port: Port) -> f64 {
        match port {
            Port::One => self.n_e1,
            Port::Two => self.n_e2,
        }
    }

    /// Coupling efficiency `η_j = κ_e,j / κ`.
    pub fn eta(&self, port: Port) -> f64 {
        self.kappa_e(port) / self.kappa()
    }

    pub fn eta_internal(&self) -> f64 {
        self.kappa_i / self.kappa()
    }
}

/// Pump strength, either as the three-wave-mixing rate `g` (rad/s) or as the
/// cooperativity `C = 4g²/κ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpStrength {
    Cooperativity(f64),
    Coupling(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    pub strength: PumpStrength,
    /// Pump phase; −π/2 squeezes the X quadrature.
    pub phi_p: f64,
    /// Detuning `Δ = ω_a − ω_p/2` (rad/s).
    pub delta: f64,
}

impl Default for PumpConfig {
    fn default() -> Self {
        Self::with_cooperativity(0.0)
    }
}

impl PumpConfig {
    pub fn with_cooperativity(c: f64) -> Self {
        Self {
            strength: PumpStrength::Cooperativity(c),
            phi_p: -FRAC_PI_2,
            delta: 0.0,
        }
    }

    pub fn with_coupling(g: f64) -> Self {
        Self {
            strength: PumpStrength::Coupling(g),
            phi_p: -FRAC_PI_2,
            delta: 0.0,
        }
    }

    pub fn phase(mut self, phi_p: f64) -> Self {
        self.phi_p = phi_p;
        self
    }

    pub fn detuning(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn coupling(&self, kappa: f64) -> f64 {
        match self.strength {
            PumpStrength::Coupling(g) => g,
            PumpStrength::Cooperativity(c) => 0.5 * kappa * c.max(0.0).sqrt(),
        }
    }

    pub fn cooperativity(&self, kappa: f64) -> f64 {
        match self.strength {
            PumpStrength::Cooperativity(c) => c,
            PumpStrength::Coupling(g) => 4.0 * g * g / (kappa * kappa),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match self.strength {
            PumpStrength::Cooperativity(c) => c,
            PumpStrength::Coupling(g) => g,
        };
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Validation(format!("pump strength {v} must be finite and ≥ 0")));
        }
        if !self.phi_p.is_finite() || !self.delta.is_finite() {
            return Err(Error::Validation("pump phase and detuning must be finite".into()));
        }
        Ok(())
    }
}

/// Rejects operating points at or above the parametric-oscillation threshold
/// `g² ≥ Δ² + κ²/4` (i.e. `C ≥ 1` on resonance).
pub fn check_stable(r: &ResonatorParams, pump: &PumpConfig) -> Result<()> {
    r.validate()?;
    pump.validate()?;
    let kappa = r.kappa();
    let g = pump.coupling(kappa);
    let threshold = pump.delta * pump.delta + 0.25 * kappa * kappa;
    if g * g >= threshold {
        return Err(Error::Instability(format!(
            "C = {:.6} is at or beyond the oscillation threshold (Δ/κ = {:.3})",
            pump.cooperativity(kappa),
            pump.delta / kappa
        )));
    }
    Ok(())
}

/// Signal and idler gains of one port at sideband frequency ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainPair {
    pub g_signal: Complex64,
    pub g_idler: Complex64,
}

impl GainPair {
    /// Relative violation of
    /// `|G_I|²/η = |G_S|² + ((1−η)/η)|G_S+1|² − 1`.
    pub fn commutation_residual(&self, eta: f64) -> f64 {
        let lhs = self.g_idler.norm_sqr() / eta;
        let plus = (self.g_signal + 1.0).norm_sqr();
        let rhs = self.g_signal.norm_sqr() + (1.0 - eta) / eta * plus - 1.0;
        let scale = lhs
            .abs()
            .max(self.g_signal.norm_sqr())
            .max((1.0 - eta) / eta * plus)
            .max(1.0);
        (lhs - rhs).abs() / scale
    }
}

fn denominator(kappa: f64, g: f64, delta: f64, omega: f64) -> Result<Complex64> {
    let z = Complex64::new(-0.5 * kappa, omega);
    let d = z * z + (delta * delta - g * g);
    if d.norm() < SINGULAR_DENOMINATOR * kappa * kappa {
        return Err(Error::Instability(format!(
            "gain denominator vanishes (|D|/κ² = {:e})",
            d.norm() / (kappa * kappa)
        )));
    }
    Ok(d)
}

pub fn gain_parameters(
    r: &ResonatorParams,
    pump: &PumpConfig,
    omega: f64,
    port: Port,
) -> Result<GainPair> {
    r.validate()?;
    pump.validate()?;
    let eta = r.eta(port);
    if !(eta > 0.0) {
        return Err(Error::Validation(format!(
            "port {} has no external coupling (η = 0)",
            port.index() + 1
        )));
    }
    let kappa = r.kappa();
    let g = pump.coupling(kappa);
    let d = denominator(kappa, g, pump.delta, omega)?;
    let numerator = Complex64::new(0.5 * kappa, -(omega + pump.delta));
    let g_signal = eta * kappa * numerator / d - 1.0;
    let g_idler = Complex64::new(0.0, -eta * kappa * g) * Complex64::from_polar(1.0, pump.phi_p) / d;
    Ok(GainPair { g_signal, g_idler })
}

/// Output covariance of both ports at sideband frequency ω, assembled term by
/// term from the output-operator expansion over the three input baths.
pub fn output_covariance(
    r: &ResonatorParams,
    pump: &PumpConfig,
    omega: f64,
) -> Result<CovarianceMatrix2M> {
    check_stable(r, pump)?;
    let rates = [r.kappa_e1, r.kappa_e2, r.kappa_i];
    let sym = [r.n_e1 + 0.5, r.n_e2 + 0.5, r.n_i + 0.5];
    let zero = Complex64::new(0.0, 0.0);

    // alpha[j][k], beta[j][k]: coefficients of a_k and a_k† in a_out,j.
    let mut alpha = [[zero; 3]; 2];
    let mut beta = [[zero; 3]; 2];
    for port in Port::BOTH {
        let j = port.index();
        let kappa_ej = r.kappa_e(port);
        if kappa_ej == 0.0 {
            // Uncoupled port: the input is reflected unchanged.
            alpha[j][j] = Complex64::new(-1.0, 0.0);
            continue;
        }
        let gains = gain_parameters(r, pump, omega, port)?;
        for k in 0..3 {
            if k == j {
                alpha[j][k] = gains.g_signal;
                beta[j][k] = gains.g_idler;
            } else {
                let ratio = (rates[k] / kappa_ej).sqrt();
                alpha[j][k] = ratio * (gains.g_signal + 1.0);
                beta[j][k] = ratio * gains.g_idler;
            }
        }
    }

    let mut m = nalgebra::Matrix4::zeros();
    for j in 0..2 {
        for l in 0..2 {
            // Symmetrized <a_j a_l> and <a_j† a_l>.
            let mut mm = zero;
            let mut nn = zero;
            for k in 0..3 {
                mm += sym[k] * (alpha[j][k] * beta[l][k] + beta[j][k] * alpha[l][k]);
                nn += sym[k] * (alpha[j][k].conj() * alpha[l][k] + beta[j][k].conj() * beta[l][k]);
            }
            m[(2 * j, 2 * l)] = mm.re + nn.re;
            m[(2 * j + 1, 2 * l + 1)] = nn.re - mm.re;
            m[(2 * j, 2 * l + 1)] = mm.im + nn.im;
            m[(2 * j + 1, 2 * l)] = mm.im - nn.im;
        }
    }
    CovarianceMatrix2M::new(m)
}

/// Quadrature variances of one output port.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureVariances {
    pub x: f64,
    pub p: f64,
}

/// Per-port `ΔX²`, `ΔP²` from the gain parameters, using the commutation
/// identity to collapse the vacuum contributions:
///
/// ```text
/// ΔX²,ΔP² = ½ + |G_I|²/η + n̄ terms ± [ (2n̄_e,j+1) Re(G_S G_I)
///            + Σ_{k≠j} (κ_k/κ_e,j)(2n̄_k+1) Re((G_S+1) G_I) ]
/// ```
///
/// On resonance with `φ_p = −π/2` the bracket is the squeezing term
/// `|G_I|·G_S sin φ_p + …`.
pub fn quadrature_variances(
    r: &ResonatorParams,
    pump: &PumpConfig,
    omega: f64,
) -> Result<[QuadratureVariances; 2]> {
    check_stable(r, pump)?;
    let mut out = [QuadratureVariances { x: 0.0, p: 0.0 }; 2];
    for port in Port::BOTH {
        let j = port.index();
        let kappa_ej = r.kappa_e(port);
        if kappa_ej == 0.0 {
            let v = r.n_e(port) + 0.5;
            out[j] = QuadratureVariances { x: v, p: v };
            continue;
        }
        let eta = r.eta(port);
        let GainPair { g_signal: gs, g_idler: gi } = gain_parameters(r, pump, omega, port)?;
        let gs1 = gs + 1.0;
        let gi2 = gi.norm_sqr();
        let other = port.other();
        let w_other = r.kappa_e(other) / kappa_ej;
        let w_int = r.kappa_i / kappa_ej;
        let (n_own, n_other, n_int) = (r.n_e(port), r.n_e(other), r.n_i);

        let base = 0.5
            + gi2 / eta
            + n_own * (gs.norm_sqr() + gi2)
            + (w_other * n_other + w_int * n_int) * (gs1.norm_sqr() + gi2);
        let squeeze = (2.0 * n_own + 1.0) * (gs * gi).re
            + (w_other * (2.0 * n_other + 1.0) + w_int * (2.0 * n_int + 1.0)) * (gs1 * gi).re;
        out[j] = QuadratureVariances {
            x: base + squeeze,
            p: base - squeeze,
        };
    }
    Ok(out)
}

/// Duan parameter of the two outputs at sideband frequency ω.
///
/// Every coefficient of the output expansion factors as
/// `√(η_j η_k)·w − δ_jk` (for `a_k`) and `√(η_j η_k)·v` (for `a_k†`), with
/// `w = κ(κ/2 − i(ω+Δ))/D` and `v = −iκ g e^{iφ_p}/D`. Summing the bath
/// moments with weights `S = Σ_k η_k (n̄_k + ½)` gives
///
/// ```text
/// Δ_EPR = Σ_j [η_j((|w|² + |v|²) S − 2 s_j Re w) + s_j]
///       + 2√(η₁η₂) Re(v (2wS − s₁ − s₂)),      s_j = n̄_e,j + ½
/// ```
pub fn epr_parameter(r: &ResonatorParams, pump: &PumpConfig, omega: f64) -> Result<f64> {
    check_stable(r, pump)?;
    let kappa = r.kappa();
    let g = pump.coupling(kappa);
    let d = denominator(kappa, g, pump.delta, omega)?;
    let w = kappa * Complex64::new(0.5 * kappa, -(omega + pump.delta)) / d;
    let v = Complex64::new(0.0, -kappa * g) * Complex64::from_polar(1.0, pump.phi_p) / d;

    let (eta1, eta2, eta_i) = (r.eta(Port::One), r.eta(Port::Two), r.eta_internal());
    let (s1, s2, si) = (r.n_e1 + 0.5, r.n_e2 + 0.5, r.n_i + 0.5);
    let big_s = eta1 * s1 + eta2 * s2 + eta_i * si;
    let gain2 = w.norm_sqr() + v.norm_sqr();

    let local: f64 = [(eta1, s1), (eta2, s2)]
        .iter()
        .map(|&(eta, s)| eta * (gain2 * big_s - 2.0 * s * w.re) + s)
        .sum();
    let cross = 2.0 * (eta1 * eta2).sqrt() * (v * (2.0 * w * big_s - s1 - s2)).re;
    Ok(local + cross)
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Validation(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

/// Squeezed-quadrature variance for vacuum inputs on resonance
/// (`φ_p = −π/2`), `½ − 2η√C/(1+√C)²`; valid up to and including `C = 1`.
pub fn squeezed_variance_ideal(c: f64, eta: f64) -> Result<f64> {
    check_unit_interval("C", c)?;
    check_unit_interval("η", eta)?;
    let s = c.sqrt();
    Ok(0.5 - 2.0 * eta * s / ((1.0 + s) * (1.0 + s)))
}

/// Anti-squeezed variance `½ + 2η√C/(1−√C)²` (diverges at `C = 1`).
pub fn antisqueezed_variance_ideal(c: f64, eta: f64) -> Result<f64> {
    check_unit_interval("η", eta)?;
    if !(0.0..1.0).contains(&c) {
        return Err(Error::Instability(format!("C = {c} outside [0, 1)")));
    }
    let s = c.sqrt();
    Ok(0.5 + 2.0 * eta * s / ((1.0 - s) * (1.0 - s)))
}

/// `(⟨X1X2⟩, ⟨P1P2⟩)` for vacuum inputs on resonance, `φ_p = −π/2`.
pub fn cross_correlations_ideal(c: f64, eta_1: f64, eta_2: f64) -> Result<(f64, f64)> {
    check_unit_interval("η₁", eta_1)?;
    check_unit_interval("η₂", eta_2)?;
    if !(0.0..1.0).contains(&c) {
        return Err(Error::Instability(format!("C = {c} outside [0, 1)")));
    }
    let s = c.sqrt();
    let k = 2.0 * (c * eta_1 * eta_2).sqrt();
    Ok((-k / ((1.0 + s) * (1.0 + s)), k / ((1.0 - s) * (1.0 - s))))
}

/// Resonant vacuum-input Duan parameter in its `(1 − C)²` form:
///
/// ```text
/// [C² + (1 − 4√(η₁η₂C)) − 2C(1 + 2√(η₁η₂C) − 2(η₁+η₂))] / (1 − C)²
/// ```
pub fn epr_parameter_ideal(c: f64, eta_1: f64, eta_2: f64) -> Result<f64> {
    check_unit_interval("η₁", eta_1)?;
    check_unit_interval("η₂", eta_2)?;
    if !(0.0..1.0).contains(&c) {
        return Err(Error::Instability(format!("C = {c} outside [0, 1)")));
    }
    let q = (eta_1 * eta_2 * c).sqrt();
    let num = c * c + (1.0 - 4.0 * q) - 2.0 * c * (1.0 + 2.0 * q - 2.0 * (eta_1 + eta_2));
    Ok(num / ((1.0 - c) * (1.0 - c)))
}

/// The same quantity rearranged so the threshold limit can be taken:
///
/// ```text
/// 1 + 4C(√η₁ − √η₂)²/(1 − C)² − 4√(η₁η₂C)/(1 + √C)²
/// ```
///
/// At `C = 1` this is finite only for balanced ports, where it equals
/// `1 − η`; for `η₁ ≠ η₂` an instability error is returned.
pub fn epr_parameter_limit(c: f64, eta_1: f64, eta_2: f64) -> Result<f64> {
    check_unit_interval("C", c)?;
    check_unit_interval("η₁", eta_1)?;
    check_unit_interval("η₂", eta_2)?;
    let s = c.sqrt();
    let imbalance = (eta_1.sqrt() - eta_2.sqrt()).powi(2);
    let tail = 4.0 * (eta_1 * eta_2 * c).sqrt() / ((1.0 + s) * (1.0 + s));
    if c == 1.0 {
        if imbalance > 1e-15 {
            return Err(Error::Instability(
                "Duan parameter diverges at C = 1 for unequal port couplings".into(),
            ));
        }
        return Ok(1.0 - tail);
    }
    Ok(1.0 + 4.0 * c * imbalance / ((1.0 - c) * (1.0 - c)) - tail)
}

/// Effect of a lossy element in front of each detector: power transmission
/// `t_j = 1 − loss_j`, with vacuum admixed through the loss port.
pub fn apply_detection_loss(
    v: &CovarianceMatrix2M,
    loss: [f64; 2],
) -> Result<CovarianceMatrix2M> {
    for (j, l) in loss.iter().enumerate() {
        if !(0.0..1.0).contains(l) {
            return Err(Error::Validation(format!(
                "detection loss of port {} = {l} must lie in [0, 1)",
                j + 1
            )));
        }
    }
    let t = [1.0 - loss[0], 1.0 - loss[1]];
    let m = v.matrix();
    let out = nalgebra::Matrix4::from_fn(|i, k| {
        let (pi, pk) = (i / 2, k / 2);
        let mut x = (t[pi] * t[pk]).sqrt() * m[(i, k)];
        if i == k {
            x += 0.5 * (1.0 - t[pi]);
        }
        x
    });
    CovarianceMatrix2M::new(out)
}

/// Linear (pump-off) reflection `S_jj(ω) = 1 − κ_e,j / (κ/2 − i(ω − ω_a))`.
pub fn reflection_coefficient(r: &ResonatorParams, omega: f64, port: Port) -> Result<Complex64> {
    r.validate()?;
    let denom = Complex64::new(0.5 * r.kappa(), -(omega - r.omega_a));
    Ok(1.0 - r.kappa_e(port) / denom)
}

/// Current dependence of a superconducting film's kinetic inductance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticInductanceParams {
    /// Zero-current inductance (H).
    pub l0: f64,
    /// Characteristic current (A).
    pub i_star: f64,
    pub i_dc: f64,
    pub i_rf: f64,
}

/// `L_k = L0 [1 + (I_dc/I*)² + 2 I_rf I_dc / I*² + (I_rf/I*)²]`.
///
/// The quadratic expansion needs `|I_dc| + |I_rf| ≤ I*`; reaching the bound
/// exactly is accepted with a warning.
pub fn kinetic_inductance(p: &KineticInductanceParams) -> Result<f64> {
    if !(p.l0 > 0.0) || !(p.i_star > 0.0) {
        return Err(Error::Validation("L0 and I* must be positive".into()));
    }
    if !p.i_dc.is_finite() || !p.i_rf.is_finite() {
        return Err(Error::Validation("currents must be finite".into()));
    }
    let total = p.i_dc.abs() + p.i_rf.abs();
    if total > p.i_star {
        return Err(Error::Domain(format!(
            "|I_dc| + |I_rf| = {total:e} A exceeds I* = {:e} A",
            p.i_star
        )));
    }
    if total == p.i_star {
        log::warn!("kinetic inductance evaluated at the edge of the quadratic expansion");
    }
    let (a, b) = (p.i_dc / p.i_star, p.i_rf / p.i_star);
    Ok(p.l0 * (1.0 + a * a + 2.0 * a * b + b * b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn symmetric_lossless() -> ResonatorParams {
        ResonatorParams::from_couplings(0.5, 0.5).unwrap()
    }

    #[test]
    fn kinetic_inductance_values() {
        let mut p = KineticInductanceParams {
            l0: 251e-9,
            i_star: 1e-3,
            i_dc: 0.0,
            i_rf: 0.0,
        };
        assert_eq!(kinetic_inductance(&p).unwrap(), 251e-9);
        p.i_dc = 1e-3;
        close(kinetic_inductance(&p).unwrap(), 2.0 * 251e-9, 1e-20);
        p.i_dc = 0.3e-3;
        close(kinetic_inductance(&p).unwrap(), 251e-9 * 1.09, 1e-20);
        p.i_dc = 0.8e-3;
        p.i_rf = 0.3e-3;
        assert!(matches!(kinetic_inductance(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn unpumped_matched_port_has_no_gain() {
        let r = symmetric_lossless();
        let g = gain_parameters(&r, &PumpConfig::with_cooperativity(0.0), 0.0, Port::One).unwrap();
        close(g.g_signal.norm(), 0.0, 1e-15);
        close(g.g_idler.norm(), 0.0, 1e-15);
    }

    #[test]
    fn single_port_unitarity() {
        let r = ResonatorParams::from_couplings(1.0, 0.0).unwrap();
        let g = gain_parameters(&r, &PumpConfig::with_cooperativity(0.25), 0.0, Port::One).unwrap();
        close(g.g_signal.re, 5.0 / 3.0, 1e-12);
        close(g.g_signal.im, 0.0, 1e-12);
        close(g.g_idler.norm(), 4.0 / 3.0, 1e-12);
        close(g.g_signal.norm_sqr() - g.g_idler.norm_sqr(), 1.0, 1e-12);
        assert!(gain_parameters(&r, &PumpConfig::default(), 0.0, Port::Two).is_err());
    }

    #[test]
    fn resonant_gains_match_reduced_form() {
        let r = ResonatorParams::reference_device();
        for c in [0.0, 0.1, 0.5, 0.9] {
            for phi in [-FRAC_PI_2, 0.3, 2.0] {
                let pump = PumpConfig::with_cooperativity(c).phase(phi);
                for port in Port::BOTH {
                    let eta = r.eta(port);
                    let g = gain_parameters(&r, &pump, 0.0, port).unwrap();
                    close(g.g_signal.re, 2.0 * eta / (1.0 - c) - 1.0, 1e-12);
                    close(g.g_signal.im, 0.0, 1e-12);
                    let gi = Complex64::new(0.0, -2.0 * eta * c.sqrt() / (1.0 - c))
                        * Complex64::from_polar(1.0, phi);
                    close((g.g_idler - gi).norm(), 0.0, 1e-12);
                    assert!(g.commutation_residual(eta) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pump_off_vacuum_output() {
        let r = ResonatorParams::reference_device();
        let v = output_covariance(&r, &PumpConfig::default(), 0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                close(v.get(i, j), if i == j { 0.5 } else { 0.0 }, 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_lossless_quarter_cooperativity() {
        let r = symmetric_lossless();
        let v = output_covariance(&r, &PumpConfig::with_cooperativity(0.25), 0.0).unwrap();
        let dx = 1.25 / (2.0 * 2.25);
        close(v.get(0, 0), dx, 1e-12);
        close(v.get(2, 2), dx, 1e-12);
        close(v.get(0, 2), -2.0 * (0.25f64 * 0.25).sqrt() / 2.25, 1e-12);
        close(v.get(0, 2), -0.2222222222222222, 1e-12);
        // 2√(C η1 η2)/(1 − √C)² = 0.5 / 0.25.
        close(v.get(1, 3), 2.0, 1e-12);
        let (xx, pp) = cross_correlations_ideal(0.25, 0.5, 0.5).unwrap();
        close(v.get(0, 2), xx, 1e-12);
        close(v.get(1, 3), pp, 1e-12);
    }

    #[test]
    fn unstable_pump_rejected() {
        let r = symmetric_lossless();
        for c in [1.0, 1.5] {
            let pump = PumpConfig::with_cooperativity(c);
            assert!(matches!(output_covariance(&r, &pump, 0.0), Err(Error::Instability(_))));
            assert!(matches!(quadrature_variances(&r, &pump, 0.0), Err(Error::Instability(_))));
            assert!(matches!(epr_parameter(&r, &pump, 0.0), Err(Error::Instability(_))));
        }
        // Detuning raises the threshold.
        let kappa = r.kappa();
        let pump = PumpConfig::with_cooperativity(1.5).detuning(kappa);
        assert!(output_covariance(&r, &pump, 0.0).is_ok());
    }

    #[test]
    fn single_port_squeezing() {
        let r = ResonatorParams::from_couplings(1.0, 0.0).unwrap();
        let q = quadrature_variances(&r, &PumpConfig::with_cooperativity(0.25), 0.0).unwrap();
        close(q[0].x, 1.0 / 18.0, 1e-12);
        close(q[0].x * q[0].p, 0.25, 1e-12);
        close(squeezed_variance_ideal(0.25, 1.0).unwrap(), 1.0 / 18.0, 1e-15);
    }

    #[test]
    fn three_db_limit() {
        close(squeezed_variance_ideal(1.0, 0.5).unwrap(), 0.25, 1e-15);
        close(epr_parameter_limit(1.0, 0.5, 0.5).unwrap(), 0.5, 1e-15);
        assert!(epr_parameter_limit(1.0, 0.6, 0.4).is_err());
        assert!(antisqueezed_variance_ideal(1.0, 0.5).is_err());
    }

    #[test]
    fn epr_closed_forms_agree() {
        for &(e1, e2) in &[(0.5, 0.5), (0.545, 0.371), (0.9, 0.05), (0.3, 0.3)] {
            let r = ResonatorParams::from_couplings(e1, e2).unwrap();
            for c in [0.0, 0.05, 0.3, 0.7, 0.95] {
                let a = epr_parameter_ideal(c, e1, e2).unwrap();
                let b = epr_parameter_limit(c, e1, e2).unwrap();
                let d = epr_parameter(&r, &PumpConfig::with_cooperativity(c), 0.0).unwrap();
                close(a, b, 1e-10 * a.max(1.0));
                close(a, d, 1e-10 * a.max(1.0));
            }
        }
        close(epr_parameter_ideal(0.25, 0.5, 0.5).unwrap(), 1.25 / 2.25, 1e-14);
    }

    #[test]
    fn zero_pump_variances_are_thermal() {
        let r = ResonatorParams::reference_device()
            .with_occupancies(0.2, 0.4, 1.0)
            .unwrap();
        let q = quadrature_variances(&r, &PumpConfig::default(), 0.0).unwrap();
        let v = output_covariance(&r, &PumpConfig::default(), 0.0).unwrap();
        for port in Port::BOTH {
            let j = port.index();
            close(q[j].x, q[j].p, 1e-14);
            close(q[j].x, v.get(2 * j, 2 * j), 1e-12);
            assert!(q[j].x > 0.5);
        }
        let vac = quadrature_variances(&ResonatorParams::reference_device(), &PumpConfig::default(), 0.0).unwrap();
        assert_eq!(vac[0].x, 0.5);
        assert_eq!(vac[1].p, 0.5);
    }

    #[test]
    fn reflection() {
        let r = symmetric_lossless();
        close(reflection_coefficient(&r, r.omega_a, Port::One).unwrap().norm(), 0.0, 1e-15);
        let far = reflection_coefficient(&r, r.omega_a + 1e4 * r.kappa(), Port::One).unwrap();
        close(far.norm(), 1.0, 1e-3);
        let dev = ResonatorParams::reference_device();
        let s11 = reflection_coefficient(&dev, dev.omega_a, Port::One).unwrap();
        close(s11.re, 1.0 - 2.0 * 19.4 / 35.6, 1e-12);
        close(s11.re, -0.0899, 1e-4);
    }

    #[test]
    fn detection_loss_mixes_in_vacuum() {
        let v = CovarianceMatrix2M::two_mode_squeezed(0.5);
        let lossy = apply_detection_loss(&v, [0.2, 0.0]).unwrap();
        close(lossy.get(0, 0), 0.8 * v.get(0, 0) + 0.1, 1e-14);
        close(lossy.get(0, 2), 0.8f64.sqrt() * v.get(0, 2), 1e-14);
        close(lossy.get(2, 2), v.get(2, 2), 1e-14);
        assert!(apply_detection_loss(&v, [1.0, 0.0]).is_err());
    }
}

//! Planck-law calibration of amplification chains.
//!
//! A matched load at temperature `T` feeds the chain, whose output noise is
//!
//! ```text
//! N(T) = G ħω R B (½ coth(ħω / 2k_B T) + n_add)
//! ```
//!
//! Sweeping `T` and fitting `N(T)` recovers the gain `G` and the
//! input-referred added noise `n_add`.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::lsq::{self, LeastSquaresProblem, LmOptions, Termination};
use crate::units::{db_to_linear, linear_to_db, HBAR, K_B};
use crate::{Error, Result};

const CSV_MAGIC: &str = "# kipa noise-curve v1";

/// `½ coth(ħω / 2k_B T)`: thermal plus vacuum quadrature noise of the load.
pub fn thermal_quanta(omega: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("temperature {t} K must be positive")));
    }
    if !(omega > 0.0) {
        return Err(Error::Validation(format!("frequency {omega} rad/s must be positive")));
    }
    Ok(0.5 / (HBAR * omega / (2.0 * K_B * t)).tanh())
}

fn power_scale(omega: f64, r: f64, b: f64) -> f64 {
    HBAR * omega * r * b
}

/// Output noise `N = G ħω R B (½ coth(ħω/2k_BT) + n_add)`.
pub fn planck_noise(gain: f64, n_add: f64, omega: f64, r: f64, b: f64, t: f64) -> Result<f64> {
    for (name, v) in [("gain", gain), ("impedance", r), ("bandwidth", b)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Validation(format!("{name} = {v} must be positive")));
        }
    }
    if !(n_add >= 0.0) || !n_add.is_finite() {
        return Err(Error::Validation(format!("n_add = {n_add} must be ≥ 0")));
    }
    Ok(gain * power_scale(omega, r, b) * (thermal_quanta(omega, t)? + n_add))
}

/// Partial derivatives of [`planck_noise`] with respect to `(gain, n_add)`.
pub fn planck_noise_gradient(gain: f64, n_add: f64, omega: f64, r: f64, b: f64, t: f64) -> Result<[f64; 2]> {
    let a = power_scale(omega, r, b);
    let x = thermal_quanta(omega, t)?;
    Ok([a * (x + n_add), gain * a])
}

/// Temperature sweep of measured output noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurve {
    points: Vec<(f64, f64)>,
    /// Signal frequency (rad/s).
    pub omega: f64,
    pub impedance: f64,
    pub bandwidth: f64,
}

impl NoiseCurve {
    pub fn new(points: Vec<(f64, f64)>, omega: f64, impedance: f64, bandwidth: f64) -> Result<Self> {
        for (name, v) in [("frequency", omega), ("impedance", impedance), ("bandwidth", bandwidth)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!("{name} = {v} must be positive")));
            }
        }
        if points.is_empty() {
            return Err(Error::Validation("noise curve has no points".into()));
        }
        for &(t, n) in &points {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Validation(format!("temperature {t} K must be positive")));
            }
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Validation(format!("noise density {n} at {t} K must be positive")));
            }
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Validation("temperatures must be strictly increasing".into()));
        }
        Ok(Self {
            points,
            omega,
            impedance,
            bandwidth,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same curve with every density multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.points.iter().map(|&(t, n)| (t, n * k)).collect(),
            self.omega,
            self.impedance,
            self.bandwidth,
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{CSV_MAGIC} frequency_Hz={} impedance_ohm={} bandwidth_Hz={}",
            crate::units::angular_to_hz(self.omega),
            self.impedance,
            self.bandwidth
        )?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["temperature_K", "noise_density_V2_per_Hz"])?;
        for p in &self.points {
            wr.serialize(p)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a curve; the metadata comment supplies frequency, impedance and
    /// bandwidth unless overridden by `defaults`.
    pub fn read_csv<R: Read>(r: R, defaults: Option<(f64, f64, f64)>) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let (mut f, mut imp, mut bw) = match defaults {
            Some((omega, r, b)) => (Some(crate::units::angular_to_hz(omega)), Some(r), Some(b)),
            None => (None, None, None),
        };
        let header_consumed = if let Some(meta) = first.trim().strip_prefix(CSV_MAGIC) {
            for field in meta.split_whitespace() {
                let parsed = field.split_once('=').and_then(|(k, v)| Some((k, v.parse::<f64>().ok()?)));
                match parsed {
                    Some(("frequency_Hz", v)) if f.is_none() => f = Some(v),
                    Some(("impedance_ohm", v)) if imp.is_none() => imp = Some(v),
                    Some(("bandwidth_Hz", v)) if bw.is_none() => bw = Some(v),
                    _ => {}
                }
            }
            true
        } else {
            false
        };
        let (f, imp, bw) = match (f, imp, bw) {
            (Some(f), Some(i), Some(b)) => (f, i, b),
            _ => {
                return Err(Error::Validation(
                    "noise curve lacks frequency_Hz, impedance_ohm or bandwidth_Hz metadata".into(),
                ))
            }
        };
        let body: Box<dyn Read> = if header_consumed {
            Box::new(reader)
        } else {
            Box::new(std::io::Cursor::new(first.into_bytes()).chain(reader))
        };
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(body);
        let headers = rd.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Validation(format!("noise curve lacks column '{name}'")))
        };
        let (ct, cn) = (col("temperature_K")?, col("noise_density_V2_per_Hz")?);
        let mut points = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let get = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Validation(format!("bad number in data row {}", line + 1)))
            };
            points.push((get(ct)?, get(cn)?));
        }
        Self::new(points, crate::units::hz_to_angular(f), imp, bw)
    }
}

/// Default synthetic sweep: 20 evenly spaced temperatures from 50 mK to 1 K.
pub fn default_temperature_grid() -> Vec<f64> {
    (0..20).map(|k| 0.05 + 0.95 * k as f64 / 19.0).collect()
}

/// Forward model with multiplicative Gaussian noise of relative size
/// `noise_fraction`.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic_curve(
    gain: f64,
    n_add: f64,
    omega: f64,
    r: f64,
    b: f64,
    temps: &[f64],
    noise_fraction: f64,
    seed: u64,
) -> Result<NoiseCurve> {
    if !(noise_fraction >= 0.0) || !noise_fraction.is_finite() {
        return Err(Error::Validation(format!("noise fraction {noise_fraction} must be ≥ 0")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let points = temps
        .iter()
        .map(|&t| {
            let n = planck_noise(gain, n_add, omega, r, b, t)?;
            let z: f64 = StandardNormal.sample(&mut rng);
            Ok((t, n * (1.0 + noise_fraction * z)))
        })
        .collect::<Result<Vec<_>>>()?;
    NoiseCurve::new(points, omega, r, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalFitResult {
    pub gain_db: f64,
    pub gain_db_sigma: f64,
    pub gain_linear: f64,
    pub n_add: f64,
    pub n_add_sigma: f64,
    /// Residual sum of squares (V⁴).
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// `N_model − N_k` at each temperature.
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl CalFitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fit in the scaled parameters `(G/G₀, n_add)` with residuals normalized by
/// the mean density, which leaves the minimizer unchanged.
struct CalProblem {
    x: Vec<f64>,
    y: Vec<f64>,
    a0: f64,
    scale: f64,
}

impl LeastSquaresProblem for CalProblem {
    fn num_params(&self) -> usize {
        2
    }

    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        let a = self.a0 * p[0];
        Some(DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(&self.y).map(|(x, y)| (a * (x + p[1]) - y) / self.scale),
        ))
    }

    fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.x.len(), 2);
        for (i, x) in self.x.iter().enumerate() {
            j[(i, 0)] = self.a0 * (x + p[1]) / self.scale;
            j[(i, 1)] = self.a0 * p[0] / self.scale;
        }
        Some(j)
    }
}

/// Ordinary least-squares line through `(x, y)`: `(slope, intercept)`.
fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| {
        let slope = sxy / sxx;
        (slope, my - slope * mx)
    })
}

/// Fits `(G, n_add)`. Without `init`, `N` is regressed on `½coth(ħω/2k_BT)`
/// over the upper half of the temperatures: the slope gives `G ħω R B` and
/// intercept / slope gives `n_add`. `init` is `(linear gain, n_add)`.
pub fn fit_noise_curve(curve: &NoiseCurve, init: Option<(f64, f64)>) -> Result<CalFitResult> {
    fit_noise_curve_with(curve, init, &LmOptions::default())
}

pub fn fit_noise_curve_with(
    curve: &NoiseCurve,
    init: Option<(f64, f64)>,
    options: &LmOptions,
) -> Result<CalFitResult> {
    if curve.len() < 3 {
        return Err(Error::Underdetermined(format!(
            "calibration needs at least 3 temperatures, got {}",
            curve.len()
        )));
    }
    let unit = power_scale(curve.omega, curve.impedance, curve.bandwidth);
    let x: Vec<f64> = curve
        .points()
        .iter()
        .map(|&(t, _)| thermal_quanta(curve.omega, t))
        .collect::<Result<_>>()?;
    let y: Vec<f64> = curve.points().iter().map(|p| p.1).collect();

    let (g0, n0) = match init {
        Some((g, n)) => {
            if !(g > 0.0) || !n.is_finite() {
                return Err(Error::Validation(format!("invalid initial guess ({g}, {n})")));
            }
            (g, n)
        }
        None => {
            let half = (x.len() / 2).min(x.len() - 2);
            let (slope, intercept) = line_fit(&x[half..], &y[half..])
                .or_else(|| line_fit(&x, &y))
                .ok_or_else(|| Error::Underdetermined("temperatures give no thermal lever arm".into()))?;
            if slope > 0.0 {
                (slope / unit, intercept / slope)
            } else {
                let ymax = y.iter().cloned().fold(0.0, f64::max);
                (ymax / (unit * (x[x.len() - 1] + 1.0)), 1.0)
            }
        }
    };
    let scale = y.iter().sum::<f64>() / y.len() as f64;
    let problem = CalProblem {
        x,
        y,
        a0: g0 * unit,
        scale,
    };
    let report = lsq::minimize(&problem, &[1.0, n0], options)?;
    let gain_linear = g0 * report.params[0];
    let n_add = report.params[1];
    let sig = report.std_errors().unwrap_or_else(|| vec![f64::NAN; 2]);
    let gain_db_sigma = linear_to_db(1.0 + sig[0] / report.params[0]).abs();
    let n_add_sigma = sig[1];
    let mut warnings = Vec::new();
    if n_add < -3.0 * n_add_sigma {
        let w = format!("fitted n_add = {n_add:.4} is negative beyond 3σ ({n_add_sigma:.4}): model mismatch");
        log::warn!("{w}");
        warnings.push(w);
    }
    if !report.converged() {
        let w = format!("fit stopped without converging ({:?})", report.termination);
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(CalFitResult {
        gain_db: linear_to_db(gain_linear),
        gain_db_sigma,
        gain_linear,
        n_add,
        n_add_sigma,
        rss: report.cost * scale * scale,
        iterations: report.iterations,
        converged: report.converged(),
        termination: report.termination,
        residuals: report.residuals.iter().map(|r| r * scale).collect(),
        warnings,
    })
}

/// Convenience for chain specifications given in dB.
pub fn planck_noise_db(gain_db: f64, n_add: f64, omega: f64, r: f64, b: f64, t: f64) -> Result<f64> {
    planck_noise(db_to_linear(gain_db), n_add, omega, r, b, t)
}

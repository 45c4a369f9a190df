//! Fit of a pump-power sweep to the cavity model.
//!
//! Pump power enters through two phenomenological maps,
//! `C(P) = c_pump·P^k` and `n̄_i(P) = c_heat·P^m`, with `k, m ∈ {1, 2}`.
//! The internal-bath occupancy of the supplied resonator is replaced by
//! `n̄_i(P)` at every sweep point.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{epr_parameter, quadrature_variances, PumpConfig, ResonatorParams};
use crate::lsq::{self, LeastSquaresProblem, LmOptions, Termination};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatingOrder {
    #[default]
    Linear,
    Quadratic,
}

impl HeatingOrder {
    pub fn exponent(self) -> i32 {
        match self {
            HeatingOrder::Linear => 1,
            HeatingOrder::Quadratic => 2,
        }
    }
}

impl FromStr for HeatingOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "1" => Ok(HeatingOrder::Linear),
            "quadratic" | "2" => Ok(HeatingOrder::Quadratic),
            _ => Err(Error::Configuration(format!("unknown power-law order '{s}'"))),
        }
    }
}

/// Power-law maps from pump power to cooperativity and bath occupancy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatingModel {
    pub pump_order: HeatingOrder,
    pub heating_order: HeatingOrder,
}

impl HeatingModel {
    pub fn cooperativity(&self, c_pump: f64, power: f64) -> f64 {
        c_pump * power.powi(self.pump_order.exponent())
    }

    pub fn occupancy(&self, c_heat: f64, power: f64) -> f64 {
        c_heat * power.powi(self.heating_order.exponent())
    }
}

/// Which model quantity a sweep value is compared with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Squeezed (X) quadrature variance of port 1, in quanta.
    Port1Variance,
    Port2Variance,
    /// Duan parameter of the two outputs.
    Epr,
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Observable::Port1Variance => "port1_variance",
            Observable::Port2Variance => "port2_variance",
            Observable::Epr => "epr",
        })
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "port1_variance" | "port1" => Ok(Observable::Port1Variance),
            "port2_variance" | "port2" => Ok(Observable::Port2Variance),
            "epr" => Ok(Observable::Epr),
            _ => Err(Error::Validation(format!("unknown observable '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepObservation {
    pub power: f64,
    pub observable: Observable,
    /// Linear value (quanta for variances, dimensionless for Δ_EPR).
    pub value: f64,
    /// One-sigma uncertainty used as residual weight; unweighted if absent.
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepFitOptions {
    pub model: HeatingModel,
    pub lm: LmOptions,
    /// Starting `(c_pump, c_heat)`; a coarse grid search is used if absent.
    pub initial: Option<[f64; 2]>,
    pub pump_phase: f64,
    pub detuning: f64,
    /// Sideband frequency at which the model is evaluated.
    pub omega: f64,
}

impl Default for SweepFitOptions {
    fn default() -> Self {
        let pump = PumpConfig::default();
        Self {
            model: HeatingModel::default(),
            lm: LmOptions::default(),
            initial: None,
            pump_phase: pump.phi_p,
            detuning: pump.delta,
            omega: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpSweepFit {
    pub model: HeatingModel,
    pub c_pump: f64,
    pub c_heat: f64,
    pub sigma_c_pump: f64,
    pub sigma_c_heat: f64,
    /// `√Σ rᵢ²` of the (weighted) residuals.
    pub residual_norm: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl PumpSweepFit {
    pub fn cooperativity(&self, power: f64) -> f64 {
        self.model.cooperativity(self.c_pump, power)
    }

    pub fn occupancy(&self, power: f64) -> f64 {
        self.model.occupancy(self.c_heat, power)
    }
}

/// Model prediction of one observable at pump power `power`.
pub fn predict(
    r: &ResonatorParams,
    options: &SweepFitOptions,
    params: [f64; 2],
    power: f64,
    observable: Observable,
) -> Result<f64> {
    let c = options.model.cooperativity(params[0], power);
    let n_i = options.model.occupancy(params[1], power);
    let mut device = *r;
    device.n_i = n_i;
    let pump = PumpConfig::with_cooperativity(c)
        .phase(options.pump_phase)
        .detuning(options.detuning);
    match observable {
        Observable::Port1Variance => Ok(quadrature_variances(&device, &pump, options.omega)?[0].x),
        Observable::Port2Variance => Ok(quadrature_variances(&device, &pump, options.omega)?[1].x),
        Observable::Epr => epr_parameter(&device, &pump, options.omega),
    }
}

struct SweepProblem<'a> {
    r: &'a ResonatorParams,
    data: &'a [SweepObservation],
    options: &'a SweepFitOptions,
}

impl LeastSquaresProblem for SweepProblem<'_> {
    fn num_params(&self) -> usize {
        2
    }

    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        if !(p[0] >= 0.0) || !(p[1] >= 0.0) {
            return None;
        }
        let mut out = DVector::zeros(self.data.len());
        for (i, obs) in self.data.iter().enumerate() {
            let model = predict(self.r, self.options, [p[0], p[1]], obs.power, obs.observable).ok()?;
            out[i] = (model - obs.value) / obs.sigma.unwrap_or(1.0);
        }
        Some(out)
    }
}

fn validate(data: &[SweepObservation]) -> Result<()> {
    if data.len() < 4 {
        return Err(Error::Underdetermined(format!(
            "pump sweep needs at least 4 points, got {}",
            data.len()
        )));
    }
    for obs in data {
        if !obs.power.is_finite() || obs.power < 0.0 || !obs.value.is_finite() {
            return Err(Error::Validation(format!("invalid sweep point {obs:?}")));
        }
        if let Some(s) = obs.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Validation(format!("sweep uncertainty must be positive, got {s}")));
            }
        }
    }
    for observable in [Observable::Port1Variance, Observable::Port2Variance, Observable::Epr] {
        let powers: Vec<f64> = data
            .iter()
            .filter(|o| o.observable == observable)
            .map(|o| o.power)
            .collect();
        if powers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "pump powers for {observable} must be strictly increasing"
            )));
        }
    }
    Ok(())
}

/// Coarse search over `(c_pump, c_heat)` inside the stable region.
fn grid_start(problem: &SweepProblem<'_>) -> Option<[f64; 2]> {
    let p_max = problem.data.iter().map(|o| o.power).fold(0.0, f64::max);
    let c_max = problem.options.model.cooperativity(1.0, p_max);
    if !(c_max > 0.0) {
        return None;
    }
    let mut best: Option<([f64; 2], f64)> = None;
    for i in 1..40 {
        let c_pump = 0.999 * (i as f64 / 40.0) / c_max;
        for j in 0..30 {
            let c_heat = if j == 0 {
                0.0
            } else {
                1e-3 * 10f64.powf(j as f64 * 5.0 / 29.0) / problem.options.model.occupancy(1.0, p_max)
            };
            if let Some(r) = problem.residuals(&[c_pump, c_heat]) {
                let cost = r.norm_squared();
                if best.is_none_or(|(_, b)| cost < b) {
                    best = Some(([c_pump, c_heat], cost));
                }
            }
        }
    }
    best.map(|(p, _)| p)
}

/// Least-squares fit of `(c_pump, c_heat)` to a pump sweep.
pub fn fit_pump_sweep(
    data: &[SweepObservation],
    r: &ResonatorParams,
    options: &SweepFitOptions,
) -> Result<PumpSweepFit> {
    validate(data)?;
    r.validate()?;
    let problem = SweepProblem { r, data, options };
    let initial = match options.initial {
        Some(p) => p,
        None => grid_start(&problem)
            .ok_or_else(|| Error::Validation("no feasible starting point for pump sweep".into()))?,
    };
    let report = lsq::minimize(&problem, &initial, &options.lm)?;
    if report.termination == Termination::MaxIterations {
        return Err(Error::FitNotConverged {
            iterations: report.iterations,
            reason: format!("iteration cap {} reached", options.lm.max_iterations),
            last: report.params,
        });
    }
    let sigmas = report.std_errors().unwrap_or_else(|| vec![f64::NAN; 2]);
    Ok(PumpSweepFit {
        model: options.model,
        c_pump: report.params[0],
        c_heat: report.params[1],
        sigma_c_pump: sigmas[0],
        sigma_c_heat: sigmas[1],
        residual_norm: report.cost.sqrt(),
        residuals: report.residuals.iter().copied().collect(),
        iterations: report.iterations,
    })
}

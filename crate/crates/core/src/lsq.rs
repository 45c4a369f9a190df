//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.
//!
//! Minimizes `Σ rᵢ(θ)²`. Each iteration solves
//! `(JᵀJ + λ diag(JᵀJ)) δ = −Jᵀr`; λ shrinks after an accepted step and
//! grows after a rejected one. A problem may report a parameter vector as
//! infeasible (e.g. beyond an instability threshold), which is treated as a
//! rejected step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub trait LeastSquaresProblem {
    fn num_params(&self) -> usize;

    /// Residual vector, or `None` if `params` is infeasible.
    fn residuals(&self, params: &[f64]) -> Option<DVector<f64>>;

    /// Jacobian `∂rᵢ/∂θⱼ`. Defaults to central differences.
    fn jacobian(&self, params: &[f64]) -> Option<DMatrix<f64>> {
        central_difference_jacobian(self, params)
    }
}

pub fn central_difference_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    params: &[f64],
) -> Option<DMatrix<f64>> {
    let n = params.len();
    let r0 = problem.residuals(params)?;
    let mut jac = DMatrix::zeros(r0.len(), n);
    let mut work = params.to_vec();
    for j in 0..n {
        let h = 1e-6 * params[j].abs().max(1e-6);
        work[j] = params[j] + h;
        let plus = problem.residuals(&work);
        work[j] = params[j] - h;
        let minus = problem.residuals(&work);
        work[j] = params[j];
        let col = match (plus, minus) {
            (Some(p), Some(m)) => (p - m) / (2.0 * h),
            (Some(p), None) => (p - &r0) / h,
            (None, Some(m)) => (&r0 - m) / h,
            (None, None) => return None,
        };
        jac.set_column(j, &col);
    }
    Some(jac)
}

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged once `‖Jᵀr‖` falls below this fraction of its initial value.
    pub gradient_tol: f64,
    /// Converged once a step changes every parameter by less than this
    /// (relative).
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-8,
            step_tol: 1e-13,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    StepSize,
    ZeroResidual,
    MaxIterations,
    /// Damping grew without finding a decrease.
    Stalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Termination::Gradient | Termination::StepSize | Termination::ZeroResidual
        )
    }
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// Residual sum of squares.
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub initial_gradient_norm: f64,
    pub gradient_norm: f64,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }

    /// Parameter covariance `s² (JᵀJ)⁻¹` with `s² = RSS / (m − n)`.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let (m, n) = self.jacobian.shape();
        if m <= n {
            return None;
        }
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let inv = jtj.try_inverse()?;
        Some(inv * (self.cost / (m - n) as f64))
    }

    /// One-sigma parameter uncertainties.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        let cov = self.covariance()?;
        Some((0..cov.nrows()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect())
    }
}

pub fn minimize<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    initial: &[f64],
    options: &LmOptions,
) -> Result<LmReport> {
    let n = problem.num_params();
    if initial.len() != n {
        return Err(Error::Validation(format!(
            "expected {n} initial parameters, got {}",
            initial.len()
        )));
    }
    let mut x = DVector::from_column_slice(initial);
    let mut r = problem
        .residuals(x.as_slice())
        .ok_or_else(|| Error::Validation("initial parameters are infeasible".into()))?;
    if r.len() < n {
        return Err(Error::Underdetermined(format!(
            "{} residuals for {n} parameters",
            r.len()
        )));
    }
    let mut cost = r.norm_squared();
    let mut jac = problem
        .jacobian(x.as_slice())
        .ok_or_else(|| Error::Validation("Jacobian unavailable at initial parameters".into()))?;
    let mut grad = jac.transpose() * &r;
    let g0 = grad.norm();
    let mut lambda = options.initial_damping;
    let mut iterations = 0;

    let report = |x: &DVector<f64>, r: DVector<f64>, jac: DMatrix<f64>, cost, iterations, termination, gn| LmReport {
        params: x.as_slice().to_vec(),
        residuals: r,
        jacobian: jac,
        cost,
        iterations,
        termination,
        initial_gradient_norm: g0,
        gradient_norm: gn,
    };

    if cost == 0.0 {
        return Ok(report(&x, r, jac, cost, 0, Termination::ZeroResidual, g0));
    }
    if g0 == 0.0 {
        return Ok(report(&x, r, jac, cost, 0, Termination::Gradient, g0));
    }

    let mut rejections = 0usize;
    while iterations < options.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let mut lhs = jtj.clone();
        for i in 0..n {
            lhs[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
        }
        let step = match lhs.cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let candidate = &x + &step;
        let accepted = match problem.residuals(candidate.as_slice()) {
            Some(rc) => {
                let cc = rc.norm_squared();
                if cc <= cost {
                    Some((rc, cc))
                } else {
                    None
                }
            }
            None => None,
        };
        match accepted {
            Some((rc, cc)) => {
                rejections = 0;
                let small_step = step
                    .iter()
                    .zip(x.iter())
                    .all(|(d, xi)| d.abs() <= options.step_tol * (xi.abs() + options.step_tol));
                x = candidate;
                r = rc;
                cost = cc;
                jac = match problem.jacobian(x.as_slice()) {
                    Some(j) => j,
                    None => {
                        return Err(Error::FitNotConverged {
                            iterations,
                            reason: "Jacobian unavailable".into(),
                            last: x.as_slice().to_vec(),
                        })
                    }
                };
                grad = jac.transpose() * &r;
                lambda = (lambda / 10.0).max(1e-15);
                let gn = grad.norm();
                if cost == 0.0 {
                    return Ok(report(&x, r, jac, cost, iterations, Termination::ZeroResidual, gn));
                }
                if gn <= options.gradient_tol * g0 {
                    return Ok(report(&x, r, jac, cost, iterations, Termination::Gradient, gn));
                }
                if small_step {
                    return Ok(report(&x, r, jac, cost, iterations, Termination::StepSize, gn));
                }
            }
            None => {
                rejections += 1;
                lambda *= 10.0;
                if rejections > 40 || !lambda.is_finite() {
                    let gn = grad.norm();
                    return Ok(report(&x, r, jac, cost, iterations, Termination::Stalled, gn));
                }
            }
        }
    }
    let gn = grad.norm();
    Ok(report(&x, r, jac, cost, iterations, Termination::MaxIterations, gn))
}

//! Detector-angle optimization over `[0, π)`.

use std::f64::consts::PI;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::gaussian::{duan_epr_of_matrix, rotate_matrix, DetectorAngles};
use crate::{Error, Result};

pub const MIN_GRID_POINTS: usize = 32;
const FLAT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleOptimum {
    /// Optimal angle in `[0, π)`.
    pub phi: f64,
    pub value: f64,
    /// The objective varied by less than 1e-9 over the grid.
    pub flat: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleMode {
    /// One common angle on both ports minimizing Δ_EPR.
    #[default]
    Joint,
    /// Each port rotated to its own minimum-variance angle.
    PerPort,
}

impl std::str::FromStr for AngleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(AngleMode::Joint),
            "per_port" | "per-port" => Ok(AngleMode::PerPort),
            _ => Err(Error::Configuration(format!("unknown angle mode '{s}'"))),
        }
    }
}

/// Grid search of a π-periodic objective followed by parabolic refinement
/// around the best grid point.
pub fn optimize_detector_angle<F: Fn(f64) -> f64>(objective: F, grid_points: usize) -> Result<AngleOptimum> {
    if grid_points < MIN_GRID_POINTS {
        return Err(Error::Validation(format!(
            "angle grid needs at least {MIN_GRID_POINTS} points, got {grid_points}"
        )));
    }
    let h = PI / grid_points as f64;
    let values: Vec<f64> = (0..grid_points).map(|k| objective(k as f64 * h)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalDomain("angle objective is not finite".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo < FLAT_TOL {
        return Ok(AngleOptimum {
            phi: 0.0,
            value: objective(0.0),
            flat: true,
        });
    }
    let k = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let y0 = values[k];
    let ym = values[(k + grid_points - 1) % grid_points];
    let yp = values[(k + 1) % grid_points];
    let curvature = ym - 2.0 * y0 + yp;
    let offset = if curvature > 0.0 {
        (0.5 * (ym - yp) / curvature).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let phi = (k as f64 + offset) * h;
    let phi = phi.rem_euclid(PI);
    let refined = objective(phi);
    if refined <= y0 {
        Ok(AngleOptimum {
            phi,
            value: refined,
            flat: false,
        })
    } else {
        Ok(AngleOptimum {
            phi: k as f64 * h,
            value: y0,
            flat: false,
        })
    }
}

/// Angle minimizing the X-quadrature variance of `port` (0 or 1).
pub fn optimize_port_angle(m: &Matrix4<f64>, port: usize, grid_points: usize) -> Result<AngleOptimum> {
    let o = 2 * port;
    let (a, b, c) = (m[(o, o)], m[(o + 1, o + 1)], m[(o, o + 1)]);
    optimize_detector_angle(
        |phi| {
            let (s, co) = phi.sin_cos();
            co * co * a + s * s * b + 2.0 * s * co * c
        },
        grid_points,
    )
}

/// Common rotation of both ports minimizing the Duan parameter.
pub fn optimize_epr_angle(m: &Matrix4<f64>, grid_points: usize) -> Result<AngleOptimum> {
    optimize_detector_angle(
        |phi| duan_epr_of_matrix(&rotate_matrix(m, DetectorAngles::new(phi, phi))),
        grid_points,
    )
}

/// Detector angles for the requested mode, plus the flat flag(s) combined.
pub fn optimize_angles(m: &Matrix4<f64>, mode: AngleMode, grid_points: usize) -> Result<(DetectorAngles, bool)> {
    match mode {
        AngleMode::Joint => {
            let o = optimize_epr_angle(m, grid_points)?;
            Ok((DetectorAngles::new(o.phi, o.phi), o.flat))
        }
        AngleMode::PerPort => {
            let o1 = optimize_port_angle(m, 0, grid_points)?;
            let o2 = optimize_port_angle(m, 1, grid_points)?;
            Ok((DetectorAngles::new(o1.phi, o2.phi), o1.flat && o2.flat))
        }
    }
}

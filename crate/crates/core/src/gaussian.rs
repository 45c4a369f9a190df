//! Two-mode Gaussian states.
//!
//! Covariance matrices are ordered `(X1, P1, X2, P2)` with vacuum variance
//! 1/2 per quadrature. Entanglement is read off the smallest symplectic
//! eigenvalue of the partially transposed matrix, which for two modes has
//! the closed form
//!
//! ```text
//! ζ∓ = √((Δ̃ ∓ √(Δ̃² − 4 det V)) / 2),   Δ̃ = det A + det B − 2 det C
//! ```
//!
//! where `A`, `B` are the local 2×2 blocks and `C` the correlation block.
//! The ordinary spectrum uses `+2 det C` instead.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Symmetry tolerance (absolute, scaled by the largest entry when > 1).
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Slack allowed below 1/2 for the smallest symplectic eigenvalue.
pub const PHYSICALITY_TOL: f64 = 1e-9;
/// Negative discriminants smaller than this (relative) are clamped to zero.
pub const DISCRIMINANT_TOL: f64 = 1e-9;

/// Covariance matrix of two bosonic modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct CovarianceMatrix2M {
    m: Matrix4<f64>,
}

impl CovarianceMatrix2M {
    /// Validates symmetry, positive diagonal, positive definiteness and the
    /// uncertainty principle (`ν₋ ≥ 1/2`). The stored matrix is exactly
    /// symmetrized.
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        let m = symmetrized(&m)?;
        for i in 0..4 {
            if !(m[(i, i)] > 0.0) {
                return Err(Error::Validation(format!(
                    "diagonal entry V[{i}][{i}] = {} is not strictly positive",
                    m[(i, i)]
                )));
            }
        }
        if m.cholesky().is_none() {
            return Err(Error::Validation(
                "covariance matrix is not positive definite".into(),
            ));
        }
        // ν₋ ≥ ½ ⇔ (ν₋² − ¼)(ν₊² − ¼) ≥ 0 and ν₋² + ν₊² ≥ ½.
        let (a, b, c) = blocks(&m);
        let delta = a.determinant() + b.determinant() + 2.0 * c.determinant();
        let det = m.determinant();
        let product = det - 0.25 * delta + 0.0625;
        let scale = det.abs() + 0.25 * delta.abs() + 0.0625;
        if product < -PHYSICALITY_TOL * scale || delta < 0.5 - PHYSICALITY_TOL {
            let spectrum = SymplecticSpectrum::of_matrix(&m)?;
            return Err(Error::Validation(format!(
                "smallest symplectic eigenvalue {} violates the uncertainty bound 1/2",
                spectrum.nu_minus
            )));
        }
        Ok(Self { m })
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(Matrix4::from_fn(|i, j| rows[i][j]))
    }

    /// Both modes in vacuum.
    pub fn vacuum() -> Self {
        Self {
            m: Matrix4::identity() * 0.5,
        }
    }

    /// Two uncorrelated thermal modes with the given mean occupancies.
    pub fn thermal(n1: f64, n2: f64) -> Result<Self> {
        Self::new(Matrix4::from_diagonal(&nalgebra::Vector4::new(
            n1 + 0.5,
            n1 + 0.5,
            n2 + 0.5,
            n2 + 0.5,
        )))
    }

    /// Two-mode squeezed vacuum with `Var(X₊) = Var(P₋) = e^{−2r}/2`.
    pub fn two_mode_squeezed(r: f64) -> Self {
        let (c, s) = ((2.0 * r).cosh() * 0.5, (2.0 * r).sinh() * 0.5);
        let m = Matrix4::new(
            c, 0.0, -s, 0.0, //
            0.0, c, 0.0, s, //
            -s, 0.0, c, 0.0, //
            0.0, s, 0.0, c,
        );
        Self { m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[(i, j)];
            }
        }
        out
    }

    /// Local blocks `A` (mode 1), `B` (mode 2) and correlation block `C`.
    pub fn blocks(&self) -> (Matrix2<f64>, Matrix2<f64>, Matrix2<f64>) {
        blocks(&self.m)
    }

    /// `S V Sᵀ`; the result is validated again.
    pub fn transformed(&self, s: &Matrix4<f64>) -> Result<Self> {
        Self::new(s * self.m * s.transpose())
    }

    /// Adds independent noise to each port, `V + diag(n1, n1, n2, n2)`.
    pub fn with_added_noise(&self, n1: f64, n2: f64) -> Result<Self> {
        let mut m = self.m;
        m[(0, 0)] += n1;
        m[(1, 1)] += n1;
        m[(2, 2)] += n2;
        m[(3, 3)] += n2;
        Self::new(m)
    }

    /// JSON array of four rows.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Four comma-separated lines, one per row, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..4 {
            let row: Vec<String> = (0..4).map(|j| self.m[(i, j)].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let lines: Vec<&str> = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if lines.len() != 4 {
            return Err(Error::Validation(format!(
                "covariance CSV must have 4 rows, found {}",
                lines.len()
            )));
        }
        let mut rows = [[0.0; 4]; 4];
        for (i, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Validation(format!(
                    "covariance CSV row {} has {} columns, expected 4",
                    i + 1,
                    fields.len()
                )));
            }
            for (j, f) in fields.iter().enumerate() {
                rows[i][j] = f.parse().map_err(|_| {
                    Error::Validation(format!("row {}, column {}: cannot parse {f:?}", i + 1, j + 1))
                })?;
            }
        }
        Self::from_rows(rows)
    }
}

impl TryFrom<[[f64; 4]; 4]> for CovarianceMatrix2M {
    type Error = Error;

    fn try_from(rows: [[f64; 4]; 4]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<CovarianceMatrix2M> for [[f64; 4]; 4] {
    fn from(v: CovarianceMatrix2M) -> Self {
        v.rows()
    }
}

fn symmetrized(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("covariance matrix has non-finite entries".into()));
    }
    let scale = m.amax().max(1.0);
    for i in 0..4 {
        for j in (i + 1)..4 {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Validation(format!(
                    "covariance matrix not symmetric: V[{i}][{j}] = {} vs V[{j}][{i}] = {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok((m + m.transpose()) * 0.5)
}

fn blocks(m: &Matrix4<f64>) -> (Matrix2<f64>, Matrix2<f64>, Matrix2<f64>) {
    let a = m.fixed_view::<2, 2>(0, 0).into_owned();
    let b = m.fixed_view::<2, 2>(2, 2).into_owned();
    let c = m.fixed_view::<2, 2>(0, 2).into_owned();
    (a, b, c)
}

/// Symplectic eigenvalues of a two-mode covariance matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymplecticSpectrum {
    pub nu_minus: f64,
    pub nu_plus: f64,
    /// Smallest symplectic eigenvalue of the partial transpose.
    pub zeta_minus: f64,
    pub zeta_plus: f64,
}

impl SymplecticSpectrum {
    /// Closed-form spectrum of any symmetric 4×4 matrix. No physicality
    /// check is made, so this also serves noisy estimates; it fails only
    /// when a square-root argument is negative beyond tolerance.
    pub fn of_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let (a, b, c) = blocks(m);
        let (da, db, dc) = (a.determinant(), b.determinant(), c.determinant());
        let det = m.determinant();
        let (nu_minus, nu_plus) = pair(da + db + 2.0 * dc, det, "ordinary")?;
        let (zeta_minus, zeta_plus) = pair(da + db - 2.0 * dc, det, "partially transposed")?;
        Ok(Self {
            nu_minus,
            nu_plus,
            zeta_minus,
            zeta_plus,
        })
    }
}

fn pair(delta: f64, det: f64, which: &str) -> Result<(f64, f64)> {
    let scale = (delta * delta).max(1e-300);
    let mut disc = delta * delta - 4.0 * det;
    if disc < 0.0 {
        if disc < -DISCRIMINANT_TOL * scale.max(1.0) {
            return Err(Error::NumericalDomain(format!(
                "{which} symplectic discriminant {disc:e} is negative"
            )));
        }
        disc = 0.0;
    }
    let root = disc.sqrt();
    let hi = 0.5 * (delta + root);
    // ζ₋²ζ₊² = det V
    let lo = if hi > 0.0 { det / hi } else { 0.5 * (delta - root) };
    if lo < 0.0 {
        if lo < -DISCRIMINANT_TOL * delta.abs().max(1.0) {
            return Err(Error::NumericalDomain(format!(
                "{which} symplectic eigenvalue squared {lo:e} is negative"
            )));
        }
        return Ok((0.0, hi.max(0.0).sqrt()));
    }
    Ok((lo.sqrt(), hi.sqrt()))
}

pub fn symplectic_eigenvalues(v: &CovarianceMatrix2M) -> Result<SymplecticSpectrum> {
    SymplecticSpectrum::of_matrix(v.matrix())
}

/// Logarithm used for the logarithmic negativity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    /// Ebits.
    #[default]
    Two,
    /// Nats.
    E,
}

impl LogBase {
    fn apply(self, x: f64) -> f64 {
        match self {
            LogBase::Two => x.log2(),
            LogBase::E => x.ln(),
        }
    }
}

impl FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "two" | "log2" | "ebit" | "ebits" => Ok(LogBase::Two),
            "e" | "ln" | "natural" | "nats" => Ok(LogBase::E),
            other => Err(Error::Validation(format!("unknown log base {other:?}"))),
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogBase::Two => f.write_str("2"),
            LogBase::E => f.write_str("e"),
        }
    }
}

/// `E_N = max[0, −log(2ζ⁻)]`; zero exactly when `ζ⁻ ≥ 1/2`.
pub fn log_negativity_from_zeta(zeta_minus: f64, base: LogBase) -> f64 {
    if zeta_minus >= 0.5 {
        return 0.0;
    }
    if zeta_minus <= 0.0 {
        return f64::INFINITY;
    }
    base.apply(1.0 / (2.0 * zeta_minus))
}

/// Logarithmic negativity in ebits.
pub fn log_negativity(v: &CovarianceMatrix2M) -> Result<f64> {
    log_negativity_with_base(v, LogBase::Two)
}

pub fn log_negativity_with_base(v: &CovarianceMatrix2M, base: LogBase) -> Result<f64> {
    let spectrum = symplectic_eigenvalues(v)?;
    Ok(log_negativity_from_zeta(spectrum.zeta_minus, base))
}

/// Logarithmic negativity of an unvalidated (e.g. estimated) matrix.
pub fn log_negativity_of_matrix(m: &Matrix4<f64>, base: LogBase) -> Result<f64> {
    let spectrum = SymplecticSpectrum::of_matrix(m)?;
    Ok(log_negativity_from_zeta(spectrum.zeta_minus, base))
}

/// Duan witness `Var(X₊) + Var(P₋)` with `X₊ = (X1 + X2)/√2`,
/// `P₋ = (P1 − P2)/√2`. Vacuum gives exactly 1.
pub fn duan_epr(v: &CovarianceMatrix2M) -> Result<f64> {
    Ok(duan_epr_of_matrix(v.matrix()))
}

pub fn duan_epr_of_matrix(m: &Matrix4<f64>) -> f64 {
    0.5 * (m[(0, 0)] + m[(1, 1)] + m[(2, 2)] + m[(3, 3)]) + m[(0, 2)] - m[(1, 3)]
}

/// Local detector rotation applied to each port in post-processing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorAngles {
    phi_1: f64,
    phi_2: f64,
}

impl DetectorAngles {
    /// Angles are wrapped into (−π, π].
    pub fn new(phi_1: f64, phi_2: f64) -> Self {
        Self {
            phi_1: wrap_angle(phi_1),
            phi_2: wrap_angle(phi_2),
        }
    }

    pub fn phi_1(&self) -> f64 {
        self.phi_1
    }

    pub fn phi_2(&self) -> f64 {
        self.phi_2
    }

    /// Block-diagonal rotation: `X(φ) = X cos φ + P sin φ`,
    /// `P(φ) = −X sin φ + P cos φ`.
    pub fn matrix(&self) -> Matrix4<f64> {
        let (s1, c1) = self.phi_1.sin_cos();
        let (s2, c2) = self.phi_2.sin_cos();
        Matrix4::new(
            c1, s1, 0.0, 0.0, //
            -s1, c1, 0.0, 0.0, //
            0.0, 0.0, c2, s2, //
            0.0, 0.0, -s2, c2,
        )
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(phi: f64) -> f64 {
    let mut a = phi.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// `R V Rᵀ` for the detector rotation `R`.
pub fn rotate_phase(v: &CovarianceMatrix2M, angles: DetectorAngles) -> Result<CovarianceMatrix2M> {
    let r = angles.matrix();
    CovarianceMatrix2M::new(r * v.matrix() * r.transpose())
}

/// Rotation of an unvalidated matrix, used on estimates.
pub fn rotate_matrix(m: &Matrix4<f64>, angles: DetectorAngles) -> Matrix4<f64> {
    let r = angles.matrix();
    r * m * r.transpose()
}

/// Smallest variance over all local quadrature angles of one port, i.e. the
/// smaller eigenvalue of the port's 2×2 block.
pub fn min_quadrature_variance(m: &Matrix4<f64>, port: usize) -> f64 {
    let o = 2 * port;
    let (a, b, c) = (m[(o, o)], m[(o + 1, o + 1)], m[(o, o + 1)]);
    let mean = 0.5 * (a + b);
    let half = 0.5 * (a - b);
    mean - half.hypot(c)
}

/// Two-mode symplectic form `Ω = ⊕ [[0, 1], [−1, 0]]`.
pub fn symplectic_form() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Phase-space beam splitter with amplitude transmission `cos θ`.
pub fn beam_splitter(theta: f64) -> Matrix4<f64> {
    let (s, c) = theta.sin_cos();
    Matrix4::new(
        c, 0.0, s, 0.0, //
        0.0, c, 0.0, s, //
        -s, 0.0, c, 0.0, //
        0.0, -s, 0.0, c,
    )
}

/// Single-mode squeezers `diag(e^{−r1}, e^{r1}, e^{−r2}, e^{r2})`.
pub fn local_squeezers(r1: f64, r2: f64) -> Matrix4<f64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(
        (-r1).exp(),
        r1.exp(),
        (-r2).exp(),
        r2.exp(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn vacuum_spectrum() {
        let s = symplectic_eigenvalues(&CovarianceMatrix2M::vacuum()).unwrap();
        assert_eq!(s.nu_minus, 0.5);
        assert_eq!(s.nu_plus, 0.5);
        assert_eq!(s.zeta_minus, 0.5);
        assert_eq!(log_negativity(&CovarianceMatrix2M::vacuum()).unwrap(), 0.0);
        assert_eq!(duan_epr(&CovarianceMatrix2M::vacuum()).unwrap(), 1.0);
    }

    #[test]
    fn thermal_spectrum() {
        let v = CovarianceMatrix2M::thermal(1.0, 1.0).unwrap();
        let s = symplectic_eigenvalues(&v).unwrap();
        assert_close(s.nu_minus, 1.5, 1e-12);
        assert_close(s.nu_plus, 1.5, 1e-12);
        assert_eq!(log_negativity(&v).unwrap(), 0.0);
    }

    #[test]
    fn two_mode_squeezed_negativity() {
        let v = CovarianceMatrix2M::two_mode_squeezed(0.5);
        let s = symplectic_eigenvalues(&v).unwrap();
        assert_close(s.zeta_minus, (-1f64).exp() / 2.0, 1e-12);
        assert_close(log_negativity(&v).unwrap(), 1.0 / std::f64::consts::LN_2, 1e-12);
        assert_close(log_negativity_with_base(&v, LogBase::E).unwrap(), 1.0, 1e-12);
        assert_close(duan_epr(&v).unwrap(), (-1f64).exp(), 1e-12);
    }

    #[test]
    fn rejects_asymmetric() {
        let mut m = Matrix4::identity() * 0.5;
        m[(0, 2)] = 0.1;
        assert!(matches!(CovarianceMatrix2M::new(m), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_unphysical() {
        // Classically valid but below the vacuum bound.
        let m = Matrix4::identity() * 0.4;
        assert!(matches!(CovarianceMatrix2M::new(m), Err(Error::Validation(_))));
        let mut m = Matrix4::identity() * 0.5;
        m[(1, 1)] = 0.0;
        assert!(matches!(CovarianceMatrix2M::new(m), Err(Error::Validation(_))));
    }

    #[test]
    fn rotation_identity_and_vacuum() {
        let v = CovarianceMatrix2M::two_mode_squeezed(0.3);
        let r = rotate_phase(&v, DetectorAngles::new(0.0, 0.0)).unwrap();
        assert_eq!(r, v);
        let vac = rotate_phase(&CovarianceMatrix2M::vacuum(), DetectorAngles::new(PI / 2.0, 0.0)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_close(vac.get(i, j), if i == j { 0.5 } else { 0.0 }, 1e-15);
            }
        }
    }

    #[test]
    fn angles_are_wrapped() {
        let a = DetectorAngles::new(3.0 * PI, -PI);
        assert_close(a.phi_1(), PI, 1e-12);
        assert_close(a.phi_2(), PI, 1e-12);
        assert_close(wrap_angle(-0.5), -0.5, 0.0);
    }

    #[test]
    fn serialization_formats() {
        let v = CovarianceMatrix2M::two_mode_squeezed(0.2)
            .with_added_noise(0.1, 0.3)
            .unwrap();
        let json = v.to_json().unwrap();
        assert!(json.starts_with("[["));
        assert_eq!(CovarianceMatrix2M::from_json(&json).unwrap(), v);
        let csv = v.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(CovarianceMatrix2M::from_csv(&csv).unwrap(), v);
        assert!(CovarianceMatrix2M::from_csv("0.5,0,0,0\n").is_err());
        assert!(CovarianceMatrix2M::from_json("[[0.1,0,0,0],[0,0.1,0,0],[0,0,0.1,0],[0,0,0,0.1]]").is_err());
    }

    #[test]
    fn min_port_variance() {
        let v = CovarianceMatrix2M::two_mode_squeezed(0.4);
        // Each mode of a TMSV is thermal: no local squeezing.
        assert_close(min_quadrature_variance(v.matrix(), 0), (0.8f64).cosh() / 2.0, 1e-12);
    }

    fn random_cm() -> impl Strategy<Value = CovarianceMatrix2M> {
        (
            0.5f64..3.0,
            0.5f64..3.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            -PI..PI,
            -PI..PI,
            -PI..PI,
            -PI..PI,
        )
            .prop_map(|(n1, n2, r1, r2, t1, t2, p1, p2)| {
                let th = Matrix4::from_diagonal(&nalgebra::Vector4::new(n1, n1, n2, n2));
                let s = DetectorAngles::new(p1, p2).matrix()
                    * beam_splitter(t1)
                    * local_squeezers(r1, r2)
                    * beam_splitter(t2);
                CovarianceMatrix2M::new(s * th * s.transpose()).unwrap()
            })
    }

    proptest! {
        #[test]
        fn spectrum_invariant_under_rotation(v in random_cm(), a in -PI..PI, b in -PI..PI) {
            let s0 = symplectic_eigenvalues(&v).unwrap();
            let s1 = symplectic_eigenvalues(&rotate_phase(&v, DetectorAngles::new(a, b)).unwrap()).unwrap();
            prop_assert!((s0.nu_minus - s1.nu_minus).abs() < 1e-10);
            prop_assert!((s0.nu_plus - s1.nu_plus).abs() < 1e-10);
            prop_assert!((s0.zeta_minus - s1.zeta_minus).abs() < 1e-10);
        }

        #[test]
        fn ppt_consistency(v in random_cm()) {
            let s = symplectic_eigenvalues(&v).unwrap();
            let en = log_negativity(&v).unwrap();
            prop_assert_eq!(s.zeta_minus >= 0.5, en == 0.0);
            prop_assert!(s.nu_minus <= s.nu_plus);
            prop_assert!(s.nu_minus >= 0.5 - PHYSICALITY_TOL);
        }

        #[test]
        fn rotation_matches_explicit_product(v in random_cm(), a in -PI..PI, b in -PI..PI) {
            let rotated = rotate_phase(&v, DetectorAngles::new(a, b)).unwrap();
            let (s1, c1) = a.sin_cos();
            let (s2, c2) = b.sin_cos();
            let r = [
                [c1, s1, 0.0, 0.0],
                [-s1, c1, 0.0, 0.0],
                [0.0, 0.0, c2, s2],
                [0.0, 0.0, -s2, c2],
            ];
            for i in 0..4 {
                for j in 0..4 {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        for l in 0..4 {
                            acc += r[i][k] * v.get(k, l) * r[j][l];
                        }
                    }
                    prop_assert!((rotated.get(i, j) - acc).abs() < 1e-12);
                }
            }
        }
    }
}

//! Simulation and analysis toolkit for path-entangled microwave radiation
//! emitted by a pumped two-port kinetic-inductance parametric amplifier.
//!
//! The crate is organised bottom-up:
//!
//! - [`gaussian`]: two-mode covariance matrices, symplectic spectra,
//!   logarithmic negativity, the Duan EPR witness and detector rotations.
//! - [`cavity`]: input-output model of the pumped two-sided resonator
//!   (gains, output covariances, closed forms, reflection, pump-sweep fits).
//! - [`measurement`]: Monte Carlo emulation of the heterodyne chain
//!   (sampling, down-conversion, scaling, on/off subtraction, estimation).
//! - [`calibration`]: Planck-law noise model and chain gain / added-noise fits.
//!
//! Quadratures follow the convention `X = (a + a†)/√2`, `P = (a − a†)/(√2 i)`,
//! so the vacuum variance is 1/2. Covariance matrices are always ordered
//! `(X1, P1, X2, P2)`. Frequencies and rates are angular (rad/s) internally.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cavity;
mod error;
pub mod gaussian;
pub mod lsq;
pub mod measurement;
pub mod units;

pub use error::{Error, Result};

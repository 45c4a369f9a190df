//! Covariance estimation, pump on/off subtraction and block-jackknife errors.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::records::{PumpState, QuadratureRecords};
use crate::{Error, Result};

pub const JACKKNIFE_BLOCKS: usize = 20;

#[derive(Clone, Copy, Debug, Default)]
struct Sums {
    n: f64,
    s: [f64; 4],
    ss: [[f64; 4]; 4],
}

impl Sums {
    fn add(&mut self, other: &Sums, sign: f64) {
        self.n += sign * other.n;
        for i in 0..4 {
            self.s[i] += sign * other.s[i];
            for j in 0..4 {
                self.ss[i][j] += sign * other.ss[i][j];
            }
        }
    }

    /// Mean-subtracted symmetrized covariance (normalized by `n − 1`).
    fn covariance(&self) -> Matrix4<f64> {
        let n = self.n;
        Matrix4::from_fn(|i, j| {
            let c = (self.ss[i][j] - self.s[i] * self.s[j] / n) / (n - 1.0);
            if i == j {
                c.max(0.0)
            } else {
                c
            }
        })
    }
}

/// Per-block first and second moment sums of a record set, from which the
/// full and leave-one-block-out covariances follow in O(1) per block.
#[derive(Clone, Debug)]
pub struct BlockSums {
    blocks: Vec<Sums>,
    total: Sums,
}

impl BlockSums {
    /// Splits the records into `min(n_blocks, N)` contiguous blocks.
    pub fn new(records: &QuadratureRecords, n_blocks: usize) -> Self {
        let n = records.len();
        let nb = n_blocks.clamp(1, n);
        let mut blocks = vec![Sums::default(); nb];
        for (idx, s) in records.samples().iter().enumerate() {
            let b = &mut blocks[idx * nb / n];
            b.n += 1.0;
            for i in 0..4 {
                b.s[i] += s[i];
                for j in i..4 {
                    b.ss[i][j] += s[i] * s[j];
                }
            }
        }
        for b in &mut blocks {
            for i in 0..4 {
                for j in 0..i {
                    b.ss[i][j] = b.ss[j][i];
                }
            }
        }
        let mut total = Sums::default();
        blocks.iter().for_each(|b| total.add(b, 1.0));
        Self { blocks, total }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn count(&self) -> usize {
        self.total.n as usize
    }

    pub fn covariance(&self) -> Matrix4<f64> {
        self.total.covariance()
    }

    /// Covariance with block `b` removed.
    pub fn leave_one_out(&self, b: usize) -> Matrix4<f64> {
        let mut s = self.total;
        s.add(&self.blocks[b], -1.0);
        s.covariance()
    }
}

/// Delete-one-block jackknife over paired block sets: returns the full-sample
/// statistic and its standard error.
fn jackknife<F>(sets: &[&BlockSums], f: F) -> (f64, f64)
where
    F: Fn(&[Matrix4<f64>]) -> f64,
{
    let full: Vec<_> = sets.iter().map(|s| s.covariance()).collect();
    let value = f(&full);
    let nb = sets.iter().map(|s| s.num_blocks()).min().unwrap_or(1);
    if nb < 2 {
        return (value, f64::NAN);
    }
    let loo: Vec<f64> = (0..nb)
        .map(|b| {
            let mats: Vec<_> = sets.iter().map(|s| s.leave_one_out(b)).collect();
            f(&mats)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / nb as f64;
    let var = loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>() * (nb - 1) as f64 / nb as f64;
    (value, var.sqrt())
}

fn elementwise_errors<F>(sets: &[&BlockSums], f: F) -> Matrix4<f64>
where
    F: Fn(&[Matrix4<f64>]) -> Matrix4<f64>,
{
    Matrix4::from_fn(|i, j| jackknife(sets, |m| f(m)[(i, j)]).1)
}

#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    /// Sample covariance; not validated as a physical state.
    pub matrix: Matrix4<f64>,
    /// Entry-wise jackknife standard errors.
    pub std_err: Matrix4<f64>,
    /// Set when some quadrature has zero sample variance.
    pub degenerate: bool,
    pub count: usize,
    blocks: BlockSums,
}

impl CovarianceEstimate {
    /// Jackknife value and standard error of a scalar function of the
    /// covariance.
    pub fn statistic<F: Fn(&Matrix4<f64>) -> f64>(&self, f: F) -> (f64, f64) {
        jackknife(&[&self.blocks], |m| f(&m[0]))
    }
}

pub fn estimate_covariance(records: &QuadratureRecords) -> Result<CovarianceEstimate> {
    if records.len() < 2 {
        return Err(Error::Validation(format!(
            "covariance estimation needs at least 2 samples, got {}",
            records.len()
        )));
    }
    let blocks = BlockSums::new(records, JACKKNIFE_BLOCKS);
    let matrix = blocks.covariance();
    let std_err = elementwise_errors(&[&blocks], |m| m[0]);
    let degenerate = (0..4).any(|i| !(matrix[(i, i)] > 0.0));
    Ok(CovarianceEstimate {
        matrix,
        std_err,
        degenerate,
        count: records.len(),
        blocks,
    })
}

/// Second moments after pump on/off subtraction:
/// `⟨X²⟩ = ⟨X²⟩_on − ⟨X²⟩_off + ξ` on the diagonal, plain differences for
/// every cross-moment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubtractedMoments {
    pub matrix: Matrix4<f64>,
    pub std_err: Matrix4<f64>,
    pub xi: f64,
    pub count_on: usize,
    pub count_off: usize,
    #[serde(skip)]
    blocks: Option<(BlockSums, BlockSums)>,
}

fn subtract(on: &Matrix4<f64>, off: &Matrix4<f64>, xi: f64) -> Matrix4<f64> {
    on - off + Matrix4::identity() * xi
}

impl SubtractedMoments {
    /// `⟨X²⟩` of `port` (0 or 1).
    pub fn x2(&self, port: usize) -> f64 {
        self.matrix[(2 * port, 2 * port)]
    }

    pub fn p2(&self, port: usize) -> f64 {
        self.matrix[(2 * port + 1, 2 * port + 1)]
    }

    /// Jackknife value and standard error of a scalar function of the
    /// subtracted moment matrix, with on and off blocks deleted in pairs.
    pub fn statistic<F: Fn(&Matrix4<f64>) -> f64>(&self, f: F) -> (f64, f64) {
        match &self.blocks {
            Some((on, off)) => jackknife(&[on, off], |m| f(&subtract(&m[0], &m[1], self.xi))),
            None => (f(&self.matrix), f64::NAN),
        }
    }
}

pub fn on_off_subtract(
    on: &QuadratureRecords,
    off: &QuadratureRecords,
    xi: f64,
) -> Result<SubtractedMoments> {
    if !xi.is_finite() {
        return Err(Error::Validation(format!("ξ = {xi} must be finite")));
    }
    if on.len() < 2 || off.len() < 2 {
        return Err(Error::Validation("on/off subtraction needs at least 2 samples per record".into()));
    }
    if on.pump_state() == PumpState::Off && off.pump_state() == PumpState::On {
        return Err(Error::Validation("pump-on and pump-off records are swapped".into()));
    }
    let nb = JACKKNIFE_BLOCKS.min(on.len()).min(off.len());
    let b_on = BlockSums::new(on, nb);
    let b_off = BlockSums::new(off, nb);
    let matrix = subtract(&b_on.covariance(), &b_off.covariance(), xi);
    let std_err = elementwise_errors(&[&b_on, &b_off], |m| subtract(&m[0], &m[1], xi));
    Ok(SubtractedMoments {
        matrix,
        std_err,
        xi,
        count_on: on.len(),
        count_off: off.len(),
        blocks: Some((b_on, b_off)),
    })
}

//! Seeded Gaussian sampling of detected quadratures.
//!
//! Samples are produced in chunks of [`CHUNK_SIZE`]; chunk `c` draws from
//! `ChaCha20Rng::seed_from_u64(seed)` on stream `c`. The output is therefore
//! independent of how chunks are scheduled across threads.

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::records::{PumpState, QuadratureRecords};
use super::ChainParams;
use crate::gaussian::CovarianceMatrix2M;
use crate::{Error, Result};

pub const CHUNK_SIZE: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleRole {
    PumpOn = 1,
    PumpOff = 2,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the record set for sweep point `index` and the given role.
pub fn derive_seed(seed: u64, index: u64, role: SampleRole) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(index)) ^ role as u64)
}

/// Draws `n` zero-mean samples with covariance
/// `V + diag(n_add,1, n_add,1, n_add,2, n_add,2)`.
pub fn sample_quadratures(
    v: &CovarianceMatrix2M,
    chains: &[ChainParams; 2],
    n: usize,
    seed: u64,
) -> Result<QuadratureRecords> {
    sample_with_state(v, chains, n, seed, PumpState::On)
}

/// Pump-off reference: vacuum plus chain noise.
pub fn sample_pump_off(chains: &[ChainParams; 2], n: usize, seed: u64) -> Result<QuadratureRecords> {
    sample_with_state(&CovarianceMatrix2M::vacuum(), chains, n, seed, PumpState::Off)
}

fn sample_with_state(
    v: &CovarianceMatrix2M,
    chains: &[ChainParams; 2],
    n: usize,
    seed: u64,
    state: PumpState,
) -> Result<QuadratureRecords> {
    if n == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    for c in chains {
        c.validate()?;
    }
    let total = v.with_added_noise(chains[0].n_add, chains[1].n_add)?;
    let l: Matrix4<f64> = total
        .matrix()
        .cholesky()
        .ok_or_else(|| Error::Validation("covariance is not positive definite".into()))?
        .unpack();

    let n_chunks = n.div_ceil(CHUNK_SIZE);
    let chunks: Vec<Vec<[f64; 4]>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK_SIZE.min(n - c * CHUNK_SIZE);
            (0..len)
                .map(|_| {
                    let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    let x = l * z;
                    [x[0], x[1], x[2], x[3]]
                })
                .collect()
        })
        .collect();
    QuadratureRecords::new(chunks.concat(), state, seed)
}

//! Seeded random instances: Gaussian `Phi` and a true vector drawn on a
//! chosen face of the gauge ball.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::builders::{build_block_l1_linf, build_l1, build_linf, Partition};
use crate::error::{Error, Result};
use crate::gauge::HMatrix;

/// Name of the generator recorded in reports.
pub const PRNG_NAME: &str = "chacha8";

/// Gauge family plus the face pattern used for the true vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `l1` gauge; `x0` has `sparsity` nonzeros with random signs.
    L1 { n: usize, sparsity: usize },
    /// `l-infinity` gauge; `x0` has `saturated` coordinates at `+-|x0|_inf`.
    Linf { n: usize, saturated: usize },
    /// Block `l1-l-infinity` with equal blocks; `active` blocks are nonzero,
    /// each with one saturated coordinate.
    Block { n_blocks: usize, block_size: usize, active: usize },
}

impl Family {
    pub fn n(&self) -> usize {
        match *self {
            Family::L1 { n, .. } | Family::Linf { n, .. } => n,
            Family::Block { n_blocks, block_size, .. } => n_blocks * block_size,
        }
    }

    pub fn build(&self) -> Result<HMatrix> {
        match *self {
            Family::L1 { n, .. } => build_l1(n),
            Family::Linf { n, .. } => build_linf(n),
            Family::Block { n_blocks, block_size, .. } => {
                let blocks = (0..n_blocks)
                    .map(|b| (b * block_size..(b + 1) * block_size).collect())
                    .collect();
                build_block_l1_linf(&Partition::new(blocks)?)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = match *self {
            Family::L1 { n, sparsity } => n == 0 || sparsity == 0 || sparsity > n,
            Family::Linf { n, saturated } => n == 0 || saturated == 0 || saturated > n,
            Family::Block { n_blocks, block_size, active } => {
                n_blocks == 0 || block_size == 0 || active == 0 || active > n_blocks
            }
        };
        if bad {
            return Err(Error::InvalidInput(format!("inconsistent family parameters {self:?}")));
        }
        Ok(())
    }

    /// Draws a vector on the face selected by the family pattern.
    pub fn draw_x0<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.n();
        let mut x = DVector::zeros(n);
        let sign = |rng: &mut R| if rng.random::<bool>() { 1.0 } else { -1.0 };
        match *self {
            Family::L1 { sparsity, .. } => {
                for i in sample(rng, n, sparsity) {
                    x[i] = sign(rng) * rng.random_range(1.0..2.0);
                }
            }
            Family::Linf { saturated, .. } => {
                let level = rng.random_range(1.0..2.0);
                for i in 0..n {
                    x[i] = level * rng.random_range(-0.8..0.8);
                }
                for i in sample(rng, n, saturated) {
                    x[i] = sign(rng) * level;
                }
            }
            Family::Block { n_blocks, block_size, active } => {
                for b in sample(rng, n_blocks, active) {
                    let level = rng.random_range(1.0..2.0);
                    let peak = rng.random_range(0..block_size);
                    for k in 0..block_size {
                        let i = b * block_size + k;
                        x[i] = if k == peak {
                            sign(rng) * level
                        } else {
                            level * rng.random_range(-0.8..0.8)
                        };
                    }
                }
            }
        }
        x
    }
}

/// One random problem instance.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub seed: u64,
    pub phi: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// Unit-variance noise direction; scale it to the desired level.
    pub noise: DVector<f64>,
}

/// Seed of row `index` derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws `Phi` (`q x n`, i.i.d. standard normal), `x0` and a noise direction.
pub fn draw_instance(family: &Family, q: usize, seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = gaussian_matrix(&mut rng, q, family.n());
    let x0 = family.draw_x0(&mut rng);
    let noise = gaussian_vector(&mut rng, q);
    RandomInstance { seed, phi, x0, noise }
}

//! Deterministic random streams indexed by (seed, round, worker, step).
//!
//! Every consumer derives its own generator from an explicit key, so the order
//! in which workers or Monte-Carlo rounds execute never changes what they draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Domain tags keep streams for different purposes disjoint under one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Noise = 1,
    Batch = 2,
    Lanczos = 3,
    Init = 4,
    Data = 5,
    Partition = 6,
    Basis = 7,
}

/// Identifies the draw made by one worker at one local step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub round: u64,
    pub worker: u64,
    pub step: u64,
    /// `round * tau + step`: position in the worker's own step sequence.
    pub global_step: u64,
}

impl StreamKey {
    pub fn new(seed: u64, round: usize, worker: usize, step: usize, tau: usize) -> Self {
        Self {
            seed,
            round: round as u64,
            worker: worker as u64,
            step: step as u64,
            global_step: (round * tau + step) as u64,
        }
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha8Rng {
        rng_for(self.seed, purpose, &[self.round, self.worker, self.step])
    }
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose, parts: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng_for(seed: u64, purpose: Purpose, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, parts))
}

pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let x: f64 = rng.sample(StandardNormal);
    T::lit(x)
}

pub fn gaussian_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

//! Seeded randomness.
//!
//! Everything stochastic in the crate draws from a [`RandomStream`], a thin
//! wrapper over ChaCha20. Independent concerns (weight init, minibatch
//! shuffling, reparameterization noise, random features, supervision masks)
//! fork their own sub-streams so adding draws in one place never shifts the
//! values seen by another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// Deterministic random stream with cheap, collision-free forking.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha20Rng,
    seed: u64,
    next_fork: u64,
}

impl RandomStream {
    /// Root stream for `seed`.
    pub fn seed(seed: u64) -> Self {
        RandomStream { rng: ChaCha20Rng::seed_from_u64(seed), seed, next_fork: 1 }
    }

    /// A stream independent of `self` and of every other fork taken so far.
    ///
    /// Forks use ChaCha's stream parameter, so the child sequence is
    /// unrelated to the parent's position: draws interleaved with forks
    /// don't perturb the children.
    pub fn fork(&mut self) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.next_fork.into());
        self.next_fork += 1;
        RandomStream { rng, seed: self.seed, next_fork: 1 }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    /// Uniform integer from `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Tensor of i.i.d. standard normal draws.
    pub fn standard_normal(&mut self, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.normal()).collect();
        Tensor::from_raw(shape, data)
    }

    /// Tensor of i.i.d. uniform draws from `[lo, hi)`.
    pub fn uniform_tensor(&mut self, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.uniform(lo, hi)).collect();
        Tensor::from_raw(shape, data)
    }

    /// Tensor of i.i.d. standard Gumbel draws, `-ln(-ln U)`.
    pub fn gumbel(&mut self, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                // U clamped away from 0/1 keeps the double log finite.
                let u: f64 = self.uniform(f64::MIN_POSITIVE, 1.0);
                -(-u.ln()).ln()
            })
            .collect();
        Tensor::from_raw(shape, data)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

//! Seeded random streams.
//!
//! Every trial derives its generators from a single 64-bit seed. The
//! generator is ChaCha8 (`rand_chacha`), keyed by `seed_from_u64(seed)`, with
//! independent ChaCha stream ids for each consumer so that the environment's
//! variates do not shift when the agent draws a different number of samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

/// Stream id for environment dynamics (service times, arrivals, warm starts).
pub const ENV_STREAM: u64 = 0;
/// Stream id for network initialisation, action sampling and minibatch shuffles.
pub const AGENT_STREAM: u64 = 1;
/// Stream id for final-policy evaluation.
pub const EVAL_STREAM: u64 = 2;

/// A deterministic source of uniform and exponential variates.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Exponential variate with the given rate (mean `1 / rate`).
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let e: f64 = Exp1.sample(&mut self.inner);
        e / rate
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Draws an index from a probability vector by inverse CDF. The last
    /// index absorbs any rounding slack.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

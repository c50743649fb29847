//! Counter-based deterministic pseudorandom generator.
//!
//! Every draw is a pure function of `(seed, counter)`, so a generator can be
//! checkpointed by recording the counter and replayed bit-exactly on any
//! platform. Parallel code derives independent child streams by seed-splitting
//! instead of sharing one generator.

use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. Full-avalanche mix of a 64-bit word.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Restore a generator from a checkpointed `(seed, counter)` pair.
    pub fn from_state(seed: u64, counter: u64) -> Self {
        Rng { seed, counter }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Derive an independent child stream. Children with distinct ids are
    /// decorrelated from the parent and from each other.
    pub fn split(&self, stream_id: u64) -> Rng {
        Rng::new(mix64(self.seed ^ mix64(stream_id.wrapping_mul(GOLDEN_GAMMA) ^ 0xA5A5_A5A5_A5A5_A5A5)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn usize_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller (no caching, draws two uniforms).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, sigma: f64) -> f64 {
        mean + sigma * self.gaussian()
    }

    pub fn lognormal(&mut self, mu: f64, sigma: f64) -> f64 {
        (mu + sigma * self.gaussian()).exp()
    }

    /// Poisson(lambda) by Knuth's product-of-uniforms method. Fine for the
    /// small rates used by the detector stand-in.
    pub fn poisson(&mut self, lambda: f64) -> usize {
        if lambda <= 0.0 {
            return 0;
        }
        let limit = (-lambda).exp();
        let mut k = 0usize;
        let mut p = 1.0;
        loop {
            p *= self.uniform();
            if p <= limit {
                return k;
            }
            k += 1;
        }
    }

    /// Beta(a, b) for small integer shapes via the order-statistic
    /// construction: the a-th smallest of a+b-1 uniforms.
    pub fn beta_int(&mut self, a: usize, b: usize) -> f64 {
        debug_assert!(a >= 1 && b >= 1);
        let n = a + b - 1;
        let mut draws: Vec<f64> = (0..n).map(|_| self.uniform()).collect();
        draws.sort_by(|x, y| x.partial_cmp(y).unwrap());
        draws[a - 1]
    }
}

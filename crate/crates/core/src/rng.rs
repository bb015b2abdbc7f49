//! Seeded random streams.
//!
//! All randomness comes from PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`). A run seed
//! is expanded into independent sub-streams, one per [`Purpose`] and index, by
//! selecting a distinct PCG stream constant. Two runs that share a seed
//! therefore consume identical initialization draws even when one of them
//! performs extra sampling elsewhere (for example the auxiliary-network phase).

use rand::{Rng as _, RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;

use crate::tensor::Tensor;

/// What a sub-stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Noise = 2,
    Shuffle = 3,
    QPhase = 4,
    Eval = 5,
    Test = 6,
}

#[derive(Clone, Debug)]
pub struct Rng {
    inner: Pcg64,
}

const STATE_MIX: u128 = 0x2360_ED05_1FC6_5DA4_4385_DF64_9FCC_F645;

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        Self::stream(seed, Purpose::Test, 0)
    }

    /// Sub-stream `index` of `purpose` under `seed`.
    pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Self {
        let state = (u128::from(seed) << 64 | u128::from(index)) ^ STATE_MIX;
        let stream = u128::from(purpose as u64) << 64 | u128::from(index);
        Self {
            inner: Pcg64::new(state, stream),
        }
    }

    /// Derives a child generator from this one's next output.
    pub fn fork(&mut self) -> Self {
        let seed = self.inner.next_u64();
        Self {
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.normal();
        }
        t
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.uniform_range(lo, hi);
        }
        t
    }

    /// Samples an index from unnormalised non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

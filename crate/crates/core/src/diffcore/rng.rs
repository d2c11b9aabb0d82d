//! Seeded random streams.
//!
//! Every stochastic step in the crate draws from an [`RngStream`]. The stream
//! is a ChaCha8 generator keyed by a 64-bit seed, so a given seed yields the
//! same sequence on every platform. Independent sub-streams are derived with
//! [`RngStream::derive`], which mixes a label into the seed instead of
//! consuming draws from the parent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A new stream whose seed is a hash of this stream's seed and `label`.
    /// Deriving does not advance `self`.
    pub fn derive(&self, label: &str) -> RngStream {
        RngStream::new(mix_seed(self.seed, label))
    }

    /// Rewind to the first draw of the seed.
    pub fn reset(&mut self) {
        self.inner = ChaCha8Rng::seed_from_u64(self.seed);
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

// FNV-1a over the label folded with a splitmix64 finalizer.
fn mix_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn reset_replays() {
        let mut a = RngStream::new(11);
        let first: Vec<f64> = (0..5).map(|_| a.normal()).collect();
        a.reset();
        let again: Vec<f64> = (0..5).map(|_| a.normal()).collect();
        assert_eq!(first, again);
    }

    #[test]
    fn derived_streams_differ_and_are_stable() {
        let root = RngStream::new(3);
        let mut x = root.derive("x");
        let mut y = root.derive("y");
        assert_ne!(x.uniform(), y.uniform());
        assert_eq!(root.derive("x").seed(), root.derive("x").seed());
    }

    #[test]
    fn bernoulli_rate() {
        let mut r = RngStream::new(1);
        let hits = (0..100_000).filter(|_| r.bernoulli(0.3)).count();
        let rate = hits as f64 / 100_000.0;
        assert!((rate - 0.3).abs() < 0.01, "{rate}");
    }

    #[test]
    fn uniform_and_normal_are_uncorrelated() {
        let mut r = RngStream::new(5);
        let n = 50_000;
        let pairs: Vec<(f64, f64)> = (0..n).map(|_| (r.uniform() - 0.5, r.normal())).collect();
        let cov: f64 = pairs.iter().map(|(a, b)| a * b).sum::<f64>() / n as f64;
        assert!(cov.abs() < 0.01, "{cov}");
    }
}

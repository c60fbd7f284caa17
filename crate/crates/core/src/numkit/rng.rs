//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed (expanded with
//! `SeedableRng::seed_from_u64`) plus a 64-bit stream id. ChaCha is a counter
//! based cipher, so the draw sequence for a given `(seed, stream)` pair is
//! fixed across runs and platforms. Independent sub-streams of a run (data,
//! initialization, batch order) are obtained with [`RngStream::substream`];
//! independent runs use `seed = master_seed + run_index`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Stream for run `index` of a sweep started from `master_seed`.
    pub fn for_run(master_seed: u64, index: u64) -> Self {
        Self::new(master_seed.wrapping_add(index))
    }

    /// A fresh, independent stream sharing this stream's seed.
    ///
    /// Stream ids are disjoint from the parent's as long as callers use
    /// distinct small ids; the parent state is not consumed.
    pub fn substream(&self, id: u64) -> Self {
        Self::with_stream(self.seed, self.stream.wrapping_mul(1 << 16).wrapping_add(id + 1))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer on `[lo, hi]`.
    pub fn integer(&mut self, lo: i64, hi: i64) -> i64 {
        self.rng.random_range(lo..=hi)
    }

    /// Uniform index on `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Draw from `N(mean, variance)`. The second parameter is a variance, not
    /// a standard deviation.
    pub fn gaussian(&mut self, mean: f64, variance: f64) -> Result<f64> {
        ensure!(
            variance >= 0.0 && variance.is_finite(),
            "variance must be finite and >= 0, got {variance}"
        );
        ensure!(mean.is_finite(), "mean must be finite, got {mean}");
        let z = self.standard_normal();
        Ok(mean + variance.sqrt() * z)
    }

    /// Sample an index according to the (unnormalized) weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        // rounding fallback: last index with positive weight
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_is_the_mean() {
        let mut rng = RngStream::new(7);
        assert_eq!(rng.gaussian(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(rng.gaussian(3.5, 0.0).unwrap(), 3.5);
    }

    #[test]
    fn negative_variance_rejected() {
        let mut rng = RngStream::new(7);
        assert!(rng.gaussian(0.0, -1.0).is_err());
    }

    #[test]
    fn equal_seeds_equal_draws() {
        let mut a = RngStream::new(12345);
        let mut b = RngStream::new(12345);
        for _ in 0..100 {
            let x = a.gaussian(1.0, 2.0).unwrap();
            let y = b.gaussian(1.0, 2.0).unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn sample_mean_within_clt_band() {
        // N(3, 4): sd 2, standard error 2/sqrt(n)
        let n = 100_000;
        let mut rng = RngStream::new(99);
        let mean = (0..n).map(|_| rng.gaussian(3.0, 4.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() <= 3.0 * 2.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn variance_not_std() {
        let n = 100_000;
        let mut rng = RngStream::new(5);
        let xs: Vec<f64> = (0..n).map(|_| rng.gaussian(0.0, 9.0).unwrap()).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 9.0).abs() < 0.2, "var {var}");
    }

    #[test]
    fn substreams_differ_and_are_reproducible() {
        let root = RngStream::new(1);
        let mut s1 = root.substream(1);
        let mut s2 = root.substream(2);
        let mut s1b = root.substream(1);
        let a = s1.uniform();
        assert_ne!(a, s2.uniform());
        assert_eq!(a, s1b.uniform());
    }
}

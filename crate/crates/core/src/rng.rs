//! Seeded, portable random number generation.
//!
//! Every stochastic step of the pipeline (weight init, shuffling, dropout masks,
//! balancing, synthetic data) draws from [`Rng`]. The generator is ChaCha with 8
//! rounds (`rand_chacha::ChaCha8Rng`), seeded through `seed_from_u64`. Its output
//! stream is specified independently of platform and word size, so a seed fully
//! determines every result.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to derive well-separated child seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the `stream`-th child of `base`. Pure function of its inputs, so
    /// parallel workers can derive their seeds without sharing a generator.
    pub fn derive_seed(base: u64, stream: u64) -> u64 {
        mix64(mix64(base) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    pub fn derive(base: u64, stream: u64) -> Self {
        Rng::new(Rng::derive_seed(base, stream))
    }

    /// Splits off an independent generator, advancing `self`.
    pub fn fork(&mut self) -> Rng {
        Rng::new(mix64(self.next_u64()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_seeds_share_no_prefix() {
        for (s1, s2) in [(0u64, 1u64), (42, 43), (7, 1 << 40)] {
            let mut a = Rng::new(s1);
            let mut b = Rng::new(s2);
            let xs: Vec<u64> = (0..1000).map(|_| a.next_u64()).collect();
            let ys: Vec<u64> = (0..1000).map(|_| b.next_u64()).collect();
            assert_ne!(xs[0], ys[0]);
            assert_ne!(xs, ys);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: Vec<u64> = (0..64).map(|i| Rng::derive_seed(7, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
        assert_eq!(Rng::derive_seed(7, 3), seeds[3]);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = Rng::new(1);
        let mut p = rng.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}

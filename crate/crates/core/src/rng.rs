//! Seeded random streams.
//!
//! [`RandomSource`] wraps a ChaCha8 generator, which is counter-based and
//! produces the same sequence on every platform. Child streams are derived
//! from the parent seed and a list of tags (for example chunk and frame
//! index), so a draw for `(chunk 3, frame 5)` never depends on how many
//! draws other streams consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream keyed by `tags`; does not advance `self`.
    pub fn split(&self, tags: &[u64]) -> Self {
        let mut h = splitmix64(self.seed);
        for &tag in tags {
            h = splitmix64(h ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        Self::new(h)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn split_streams_are_independent_of_parent_state() {
        let mut parent = RandomSource::new(9);
        let before = parent.split(&[1, 2]).normals(4);
        parent.normals(10);
        assert_eq!(parent.split(&[1, 2]).normals(4), before);
        assert_ne!(parent.split(&[2, 1]).normals(4), before);
        assert_ne!(parent.split(&[1]).normals(4), before);
    }

    #[test]
    fn sequence_is_pinned() {
        // Frozen first draws; a change here breaks reproducibility of saved runs.
        assert_eq!(RandomSource::new(0).next_u64(), 13080132717333068652);
        assert_eq!(RandomSource::new(0).split(&[1, 2]).normal(), 0.9489908680702457);
    }
}

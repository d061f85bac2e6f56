use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seedable, splittable random stream backed by the ChaCha8 counter-mode
/// generator. Children derived with [`Stream::split`] depend only on the
/// parent's seed and the key, never on how much of the parent was consumed.
#[derive(Clone, Debug)]
pub struct Stream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, key: u64) -> Stream {
        Stream::new(splitmix64(
            self.seed ^ splitmix64(key.wrapping_add(0xD1B5_4A32_D192_ED03)),
        ))
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, self)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    /// Index drawn proportionally to non-negative `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform_open() * total;
        for (i, &w) in weights.iter().enumerate() {
            if target < w {
                return i;
            }
            target -= w;
        }
        // rounding left a sliver past the last bucket
        weights
            .iter()
            .rposition(|&w| w > 0.0)
            .unwrap_or(weights.len() - 1)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), self);
        idx
    }
}

impl RngCore for Stream {
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
    fn same_seed_same_draws() {
        let mut a = Stream::new(7);
        let mut b = Stream::new(7);
        assert_eq!(a.normals(16), b.normals(16));
    }

    #[test]
    fn split_ignores_parent_position() {
        let a = Stream::new(11);
        let mut b = Stream::new(11);
        b.normals(5);
        assert_eq!(a.split(3).normals(4), b.split(3).normals(4));
        assert_ne!(a.split(3).normals(4), a.split(4).normals(4));
    }

    #[test]
    fn categorical_respects_zero_weights() {
        let mut s = Stream::new(1);
        for _ in 0..1000 {
            assert_eq!(s.categorical(&[0.0, 2.0, 0.0]), 1);
        }
    }
}

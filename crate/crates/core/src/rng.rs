//! Seeded random sources. Every stochastic component draws from a
//! `ChaCha8Rng` whose seed is derived from the run seed, so runs are
//! reproducible bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::Tensor;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    let mut z = seed;
    for &s in stream {
        z = z
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(s.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if std > 0.0 {
        let dist = Normal::new(0.0, std).expect("finite positive std");
        t.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
    }
    t
}

pub fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if bound > 0.0 {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..bound));
    }
    t
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

//! Seeding. Every random stream in the pipeline is a ChaCha8 generator whose
//! seed is derived from a global seed and a textual label with FNV-1a, so a
//! stage's randomness depends only on the global seed and the stage name.

use alloc::vec::Vec;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Seed for `label` under `global`: FNV-1a over the little-endian global seed
/// followed by the UTF-8 label.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in global.to_le_bytes().iter().chain(label.as_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Seed for the `index`-th item of a stream.
pub fn derive_index_seed(global: u64, index: u64) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&global.to_le_bytes());
    bytes[8..].copy_from_slice(&index.to_le_bytes());
    fnv1a(&bytes)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fills `out` with standard-normal draws.
pub fn fill_normal<R: RngCore>(rng: &mut R, out: &mut [f32]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// `n` independent standard-normal latent codes of length `dim`, flattened
/// row-major, deterministic per seed.
pub fn sample_prior(n: usize, seed: u64, dim: usize) -> Vec<f32> {
    let mut rng = rng_from_seed(seed);
    let mut out = alloc::vec![0.0f32; n * dim];
    fill_normal(&mut rng, &mut out);
    out
}

/// Uniform float in [0, 1).
pub fn unit_f32<R: RngCore>(rng: &mut R) -> f32 {
    (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
}

/// Uniform index in `0..n` (n > 0).
pub fn index<R: RngCore>(rng: &mut R, n: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: RngCore>(rng: &mut R, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

//! Seeded, portable randomness.
//!
//! All stochastic choices in the pipeline derive from a base seed plus a
//! fixed word path (epoch, step, purpose), so any stage can be recomputed
//! in isolation and resumed runs replay the exact same draws.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step, used to fold seed words together.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a path of context words.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0xa076_1d64_78bd_642f);
    for &w in path {
        s = splitmix64(s ^ w);
    }
    s
}

/// Deterministic, platform-independent generator for a derived seed.
pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Uniform draw in (0, 1]: strictly positive, so non-negativity-seeded
/// factor matrices never start with a zero entry.
pub fn uniform_pos(rng: &mut impl Rng) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Uniform draw in [-limit, limit].
pub fn uniform_sym(rng: &mut impl Rng, limit: f64) -> f64 {
    (rng.gen::<f64>() * 2.0 - 1.0) * limit
}

/// Glorot-style uniform limit for a layer with the given fan-in/out.
pub fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

//! Deterministic random number helpers shared across the workspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The one RNG used everywhere; seeding it fixes every downstream draw.
pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed and a label, so subsystems
/// cannot perturb each other's sequences.
pub fn derive(seed: u64, label: &str) -> Prng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seeded(seed ^ h)
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut Prng) -> f64 {
    let u1: f64 = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn normal_vec(rng: &mut Prng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

//! Seeded random-number plumbing shared across the crate.
//!
//! Everything that draws randomness takes an explicit [`Rng`] so that runs
//! are reproducible from a seed and safe to use from multiple workers with
//! independent streams.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The deterministic generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Builds a generator from a 64-bit seed.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent generator for a named sub-task of a run.
///
/// Different labels yield uncorrelated streams for the same base seed, so
/// e.g. weight initialization and batch shuffling can be reseeded
/// independently.
pub fn derived(seed: u64, label: &str) -> Rng {
    let mut h = crate::digest::Fnv64::new();
    h.update_u64(seed);
    h.update(label.as_bytes());
    seeded(h.finish())
}

/// Uniform draw in `[0, 1)`.
pub fn uniform(rng: &mut Rng) -> f64 {
    // 53 random bits mapped onto the unit interval.
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw via the Marsaglia polar method.
pub fn normal(rng: &mut Rng) -> f64 {
    loop {
        let u = 2.0 * uniform(rng) - 1.0;
        let v = 2.0 * uniform(rng) - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Snapshot of a generator, serializable into checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

//! Deterministic random-number streams.
//!
//! All stochastic behaviour in the crate (synthetic noise, window shifts,
//! augmentation draws, dropout masks, weight init) flows through seeded ChaCha
//! generators. Independent *streams* are derived per logical unit of work
//! (sequence, window, epoch) so that serial and parallel evaluation orders
//! produce bit-identical results.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type DetRng = ChaCha8Rng;

/// Root generator for a seed.
pub fn root(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for a `(seed, stream)` pair.
///
/// Streams with distinct ids never overlap regardless of how much either one
/// is consumed.
pub fn stream(seed: u64, stream_id: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id.into());
    rng
}

/// Substream helper for two-level derivations such as `(epoch, window)`.
pub fn substream(seed: u64, a: u64, b: u64) -> DetRng {
    // Mix the pair into one stream id; the constant is the golden-ratio hash
    // multiplier, enough to keep (a, b) pairs from colliding in practice.
    stream(seed, a.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(b))
}

/// Uniform draw from `[lo, hi)`.
pub fn uniform(rng: &mut DetRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard-normal sampler (Box–Muller, the cached pair keeps draws cheap).
#[derive(Clone, Debug, Default)]
pub struct Normal {
    cached: Option<f64>,
}

impl Normal {
    pub fn new() -> Self {
        Self { cached: None }
    }

    pub fn sample(&mut self, rng: &mut DetRng) -> f64 {
        if let Some(z) = self.cached.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let r = crate::fm::sqrt(-2.0 * crate::fm::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.cached = Some(r * crate::fm::sin(theta));
        r * crate::fm::cos(theta)
    }
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T>(rng: &mut DetRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

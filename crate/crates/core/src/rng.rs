//! Seeded random streams.
//!
//! Every random decision in the crate goes through [`stream`], so a
//! `(seed, stream id)` pair always reproduces the same draws regardless of
//! how many other streams were consumed before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the crate. Callers that need several independent
/// streams for one seed offset from these.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const LOGISTIC_INIT: u64 = 2;
    pub const BOOTSTRAP: u64 = 1 << 20;
    pub const EXAMPLES: u64 = 3;
    pub const ENUMERATION: u64 = 4;
    pub const SYNTH_DATA: u64 = 5;
    pub const SYNTH_SCORES: u64 = 1 << 24;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    // u1 in (0, 1] so ln is finite
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

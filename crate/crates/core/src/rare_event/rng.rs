use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STAGE_MONTE_CARLO: u64 = 0;
/// CE iteration `t` (from 1) uses stage `STAGE_CE + t`.
pub const STAGE_CE: u64 = 1 << 10;
pub const STAGE_FINAL: u64 = 1 << 11;
/// Sweep of faulted branch `b` uses stage `STAGE_SWEEP + b`.
pub const STAGE_SWEEP: u64 = 1 << 20;

/// Master seed from which every scenario stream is derived.
///
/// Stream `(stage, index)` is the ChaCha stream `stage << 40 | index` of the
/// generator keyed by the seed, so draws depend only on the pair and never
/// on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeed(pub u64);

impl StreamSeed {
    pub fn stream(&self, stage: u64, index: u64) -> ChaCha8Rng {
        debug_assert!(stage < 1 << 24 && index < 1 << 40);
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream((stage << 40) | index);
        rng
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG stream `stream` under run seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub const STREAM_INIT: u64 = 1;
pub const STREAM_BEHAVIOR_BASE: u64 = 10;
pub const STREAM_BATCH: u64 = 20;
pub const STREAM_PRIMARY: u64 = 30;
pub const STREAM_SUITE: u64 = 40;
pub const STREAM_HELDOUT_BASE: u64 = 50;

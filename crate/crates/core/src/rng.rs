use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible random streams derived from one seed.
///
/// Each consumer (parameter init, batching, negative sampling, ...) gets
/// its own stream so that adding or removing one consumer never shifts the
/// numbers another one sees.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod streams {
    pub const TEXT_INIT: u64 = 1;
    pub const VIDEO_INIT: u64 = 2;
    pub const AUDIO_INIT: u64 = 3;
    pub const MATCHER_INIT: u64 = 4;
    pub const PROTOTYPES: u64 = 10;
    pub const TRAIN_NOISE: u64 = 11;
    pub const TEST_NOISE: u64 = 12;
    /// Batch shuffles use `SHUFFLE_BASE + epoch`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
    /// DTM negatives use `NEGATIVES_BASE + step`.
    pub const NEGATIVES_BASE: u64 = 2 << 32;
}

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep the per-purpose generators of a run independent of one
/// another so that resuming at generation g replays the exact same draws as
/// an uninterrupted run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    WeightInit,
    Shuffle,
    Augment,
    Synthesis,
    Bench,
    Data,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::WeightInit => 0x01,
            Stream::Shuffle => 0x02,
            Stream::Augment => 0x03,
            Stream::Synthesis => 0x04,
            Stream::Bench => 0x05,
            Stream::Data => 0x06,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministically remixes a seed with a salt (e.g. a generation index).
pub fn mix(seed: u64, salt: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ salt.rotate_left(23))
}

/// Derives a generator for (seed, stream, index) without sharing state
/// between substreams.
pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ stream.tag().rotate_left(17));
    state = splitmix64(state ^ index);
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

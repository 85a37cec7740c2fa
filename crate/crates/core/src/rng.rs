//! Counter-based random streams.
//!
//! Every random draw in a trial comes from a ChaCha20 stream whose key is
//! `(master_seed, trial)` and whose stream id encodes the link (or surface)
//! being drawn. Any single channel can therefore be regenerated in isolation,
//! and trials can run in any order or in parallel with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialKey {
    pub master_seed: u64,
    pub trial: u64,
}

impl TrialKey {
    pub fn new(master_seed: u64, trial: u64) -> Self {
        Self { master_seed, trial }
    }
}

/// What a stream is used for. Indices are 0-based and must stay below 2^24.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    ApToSurface { surface: usize, ap: usize },
    SurfaceToUser { surface: usize, user: usize },
    ApToUser { ap: usize, user: usize },
    ScatteringInit { surface: usize },
}

impl Stream {
    pub fn id(self) -> u64 {
        let pack = |tag: u64, a: usize, b: usize| {
            debug_assert!(a < (1 << 24) && b < (1 << 24));
            (tag << 48) | ((a as u64) << 24) | b as u64
        };
        match self {
            Stream::ApToSurface { surface, ap } => pack(1, surface, ap),
            Stream::SurfaceToUser { surface, user } => pack(2, surface, user),
            Stream::ApToUser { ap, user } => pack(3, ap, user),
            Stream::ScatteringInit { surface } => pack(4, surface, 0),
        }
    }
}

pub fn stream_rng(key: TrialKey, stream: Stream) -> ChaCha20Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&key.master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&key.trial.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(stream.id());
    rng
}

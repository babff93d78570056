//! Named, independent random streams.
//!
//! Every stochastic subsystem draws from its own ChaCha stream keyed by
//! `(seed, stream)`, so adding draws in one subsystem never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Placement,
    Mobility,
    Traffic,
    Shadowing,
    Policy,
    Training,
    /// Free-form stream for callers that need more than the fixed set.
    Custom(u64),
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Placement => 1,
            Stream::Mobility => 2,
            Stream::Traffic => 3,
            Stream::Shadowing => 4,
            Stream::Policy => 5,
            Stream::Training => 6,
            Stream::Custom(id) => 0x1000 + id,
        }
    }
}

/// Deterministic generator for `(seed, stream)`; identical on every platform.
pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

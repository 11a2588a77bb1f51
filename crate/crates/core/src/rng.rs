//! Named random-number streams.
//!
//! Every consumer of randomness draws from a ChaCha8 generator keyed by the
//! user seed and a fixed stream id, so independent components never share a
//! sequence and a run is reproducible from `(seed, stream)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Topology,
    Simulation,
    Anneal,
    ParamFit,
    Baseline,
    Ensemble,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Topology => 1,
            Stream::Simulation => 2,
            Stream::Anneal => 3,
            Stream::ParamFit => 4,
            Stream::Baseline => 5,
            Stream::Ensemble => 6,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Stream for the `index`-th replicate (trial, path, ...) of a component.
pub fn substream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    // splitmix64 keeps neighbouring indices far apart in seed space
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    stream(z, which)
}

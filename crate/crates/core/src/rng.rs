//! Deterministic random-number streams.
//!
//! Every stochastic component draws from a ChaCha stream keyed by
//! `(seed, replicate, purpose, index)`. Streams never depend on thread
//! scheduling, so experiment outputs are byte-identical at any thread
//! count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a stream is consumed for. Keeps unrelated draws independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    DataGen = 1,
    TrueRisk = 2,
    PhiSamples = 3,
    TrainInit = 4,
    RandomStarts = 5,
    CriticalRadius = 6,
    SmoothedDraw = 7,
    NormalizationMc = 8,
    Shift = 9,
    Battery = 10,
    Bootstrap = 11,
}

/// Replicate id reserved for the shared reference sample.
pub const REFERENCE_REPLICATE: u64 = (1 << 24) - 1;

fn pack(replicate: u64, purpose: Purpose, index: u64) -> u64 {
    assert!(replicate < (1 << 24), "replicate id out of range");
    assert!(index < (1 << 32), "stream index out of range");
    (replicate << 40) | ((purpose as u64) << 32) | index
}

/// Stream for a whole (replicate, purpose) unit of work.
pub fn stream(seed: u64, replicate: u64, purpose: Purpose) -> ChaCha12Rng {
    substream(seed, replicate, purpose, 0)
}

/// Stream for one indexed item (a data point, a grid entry, ...) inside
/// a (replicate, purpose) unit.
pub fn substream(seed: u64, replicate: u64, purpose: Purpose, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(pack(replicate, purpose, index));
    rng
}

/// Derives a fresh 64-bit seed for components that key their own
/// substreams (e.g. the dual solver's per-point sample caches).
pub fn derive_seed(seed: u64, replicate: u64, purpose: Purpose) -> u64 {
    // splitmix64 over the packed id, offset by the base seed
    let mut z = seed ^ pack(replicate, purpose, 0).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

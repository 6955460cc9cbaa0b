//! Seeding conventions.
//!
//! Every random stream in the crate is a `ChaCha8Rng` built with
//! `SeedableRng::seed_from_u64`. Standard normals come from
//! `rand_distr::StandardNormal` (ZIGNOR ziggurat). Both are pure integer and
//! IEEE-754 arithmetic, so a seed reproduces the same stream on any platform.
//!
//! Seeds for sub-streams (data, init, test, sweep cells, evaluation chunks)
//! are derived with [`derive_seed`], a SplitMix64 fold over the parts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into one seed: `h = splitmix64(h ^ part)` starting from
/// `h = splitmix64(len)`. Floats should be passed as `f64::to_bits`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(parts.len() as u64), |h, &p| splitmix64(h ^ p))
}

/// Stream tags for [`derive_seed`].
pub mod stream {
    pub const DATA: u64 = 0x6461_7461; // "data"
    pub const INIT: u64 = 0x696e_6974; // "init"
    pub const TEST: u64 = 0x7465_7374; // "test"
    pub const CELL: u64 = 0x6365_6c6c; // "cell"
}

/// The three independent seeds of one run, derived from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub data: u64,
    pub init: u64,
    pub test: u64,
}

impl RunSeeds {
    pub fn from_master(seed: u64) -> Self {
        RunSeeds {
            data: derive_seed(&[seed, stream::DATA]),
            init: derive_seed(&[seed, stream::INIT]),
            test: derive_seed(&[seed, stream::TEST]),
        }
    }
}

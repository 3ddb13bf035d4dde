//! Seed fan-out. Every random draw in the crate comes from a ChaCha stream
//! keyed by `(root seed, purpose, index)` so that results do not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Distinct purposes never share streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Data,
    Augment,
    Attack,
    Init,
    Order,
    Corrupt,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Data => 0x6461_7461,
            Purpose::Augment => 0x6175_676d,
            Purpose::Attack => 0x6174_7463,
            Purpose::Init => 0x696e_6974,
            Purpose::Order => 0x6f72_6472,
            Purpose::Corrupt => 0x636f_7272,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for one `(purpose, index)` stream under `root`.
pub fn derive_seed(root: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ purpose.tag()) ^ index)
}

pub fn stream(root: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, index))
}

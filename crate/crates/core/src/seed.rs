//! Root-seed splitting.
//!
//! Every random stream in a run is derived from one root seed so that a run
//! is fully described by its configuration plus that seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Components that draw randomness. The discriminant is mixed into the root
/// seed, so reordering variants changes every derived stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    InstanceGen = 1,
    Svd = 2,
    EnvReset = 3,
    PolicyInit = 4,
    MinibatchShuffle = 5,
    ActionSampling = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one component, derived from the root seed.
pub fn derive(root: u64, component: Component) -> u64 {
    splitmix64(splitmix64(root) ^ (component as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_for(root: u64, component: Component) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, component))
}

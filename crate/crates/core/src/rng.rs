//! Purpose-keyed seed derivation.
//!
//! Every random stream in the crate is derived from one root seed and a
//! purpose string (`"init"`, `"data"`, `"dropout"`, `"shuffle"`, ...), so a
//! subsystem can be replayed without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `root` with an FNV-1a hash of `purpose`.
pub fn derive_seed(root: u64, purpose: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h))
}

pub fn rng_for(root: u64, purpose: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(root, purpose))
}

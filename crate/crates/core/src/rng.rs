//! Seed splitting.
//!
//! Every random stream is derived from one base seed:
//! `splitmix64(base ^ fnv1a(label) ^ splitmix64(index))`, which seeds a
//! ChaCha8 generator. Labels name the consumer (`"impute"`, `"hot-deck"`,
//! `"replication"`, ...), and indices enumerate imputations or replications,
//! so streams never overlap and results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Short hex digest of a text, used to tag artifacts with their inputs.
pub fn fingerprint(text: &str) -> String {
    format!("{:016x}", splitmix64(fnv1a(text)))
}

pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    splitmix64(base ^ fnv1a(label) ^ splitmix64(index))
}

pub fn stream(base: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, label, index))
}

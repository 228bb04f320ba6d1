//! Seed derivation for independent, named random streams.
//!
//! Every run owns one root seed. Subsystems draw from their own stream so
//! that adding draws in one module never shifts the values another module
//! sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const SCENARIO: &str = "scenario";
pub const ARRIVALS: &str = "arrivals";
pub const MOBILITY: &str = "mobility";
pub const CHANNEL: &str = "channel";
pub const CLUSTERING: &str = "clustering";
pub const RACH: &str = "rach";
pub const PROTOCOL: &str = "protocol";
pub const GDB: &str = "gdb";

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn derive_seed(root: u64, name: &str) -> u64 {
    mix64(root ^ mix64(name_hash(name)))
}

pub fn stream(root: u64, name: &str) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, name))
}

/// A generator keyed by an unordered pair, so that `(a, b)` and `(b, a)`
/// yield the same draws. Used for frozen per-link quantities.
pub fn pair_stream(seed: u64, a: u32, b: u32) -> SimRng {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let key = ((lo as u64) << 32) | hi as u64;
    SimRng::seed_from_u64(mix64(seed ^ mix64(key)))
}

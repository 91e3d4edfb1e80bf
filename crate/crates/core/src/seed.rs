//! Keyed seed derivation. Every random stream is derived from the master
//! seed plus a fixed path of tags, so the draws for one entity do not depend
//! on how many draws other entities consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATACENTER: u64 = 1;
pub const APPLICATION: u64 = 2;
pub const ARRIVALS: u64 = 3;
pub const PLACE_RANDOM: u64 = 4;
pub const FAULTS: u64 = 5;
pub const PM_FAILURES: u64 = 6;
pub const FAILOVER: u64 = 7;
pub const BLAST: u64 = 8;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}

/// Stable 64-bit key for a string (FNV-1a).
pub fn key(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

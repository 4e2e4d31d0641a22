//! Keyed random streams. Every stream is derived from the run seed plus
//! stable identifiers, never from generation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_TRUTH: u64 = 0x7472_7574_6800;
pub(crate) const STREAM_PATIENT: u64 = 0x7061_7469_656e;
pub(crate) const STREAM_REPLICATE: u64 = 0x7265_706c_6963;
pub(crate) const STREAM_INCLUSION: u64 = 0x696e_636c_7573;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub(crate) fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

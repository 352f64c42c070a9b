//! Seed derivation.
//!
//! A single master seed feeds every random stream through a counter scheme:
//! `derive(master, stream, index)` mixes the three words with SplitMix64. Streams
//! are fixed tags, so rerunning any subset of blocks or frames reproduces them.

pub const STREAM_FROZEN: u64 = 1;
pub const STREAM_BLOCK: u64 = 2;
pub const STREAM_TILT: u64 = 3;
pub const STREAM_NOISE: u64 = 4;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ stream) ^ index)
}

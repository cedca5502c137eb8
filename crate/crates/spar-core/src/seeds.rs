//! Deterministic derivation of sub-stream seeds from a master seed.
//!
//! Every source of randomness in the crate (network init, data shuffles,
//! bootstrap resamples, Monte Carlo draws) receives a seed derived here, so
//! a single master seed reproduces an entire run regardless of scheduling.

/// SplitMix64 finalizer; decorrelates consecutive stream indices.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of master seed `master`.
pub fn derive(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

//! Derived random streams. Every stream is a pure function of the run seed
//! and a path of integers, so results do not depend on execution order.

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds [`derive_seed`] over `path`.
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &p| derive_seed(s, p))
}

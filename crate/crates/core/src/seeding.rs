//! Deterministic derivation of per-stage seeds from a master seed.
//!
//! Every stochastic stage (corpus synthesis, stabilization sampling,
//! parameter init, batch sampling, dropout, augmentation) owns a seed
//! derived here, so parallel and serial executions of the same run
//! produce identical results.

/// SplitMix64 finalizer; bijective on u64 with good avalanche behavior.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and one stream index.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ splitmix64(stream.wrapping_add(0x51ed_270b)))
}

/// Derive a child seed from a base seed and two stream indices.
pub fn derive2(base: u64, a: u64, b: u64) -> u64 {
    derive(derive(base, a), b)
}

/// Derive a child seed from a base seed and three stream indices.
pub fn derive3(base: u64, a: u64, b: u64, c: u64) -> u64 {
    derive(derive2(base, a, b), c)
}

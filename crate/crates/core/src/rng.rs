//! Deterministic 64-bit mixing primitives.
//!
//! Everything random in this crate flows through the SplitMix64 generator
//! below so that runs are reproducible bit-for-bit across platforms and so
//! that alternate-language ports can interoperate. The exact constants and
//! update rules are documented in `docs/mask-construction.md`; changing them
//! breaks every frozen mask and every recorded experiment seed.

/// SplitMix64 finalizer. Full-avalanche mix of a 64-bit value.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Weyl increment used by the SplitMix64 stream.
pub const SPLIT_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 stream: `state += GAMMA; output = mix64(state)`.
#[derive(Debug, Clone)]
pub struct Mix64Stream {
    state: u64,
}

impl Mix64Stream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(SPLIT_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, n)` via the multiply-shift reduction
    /// (`(x * n) >> 64`). No rejection step: the bias is at most `n / 2^64`,
    /// far below anything observable here, and the output is a pure function
    /// of the stream, which is what the bit-level reproducibility contract
    /// requires.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Derives an independent child seed from a root seed, a domain tag, and an
/// index. All experiment randomness is split through this so any grid row
/// can be re-derived in isolation.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix64(root ^ 0xA076_1D64_78BD_642F);
    for &b in tag.as_bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ mix64(index.wrapping_add(SPLIT_GAMMA)))
}

/// Order-insensitive-free digest of a slice of 64-bit words (used for mask
/// and logit digests in audit records).
pub fn digest_words(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64; // pi fraction, arbitrary nonzero start
    for w in words {
        h = mix64(h ^ w);
    }
    h
}

/// Digest of a logit vector: folds the IEEE-754 bit patterns.
pub fn digest_f64s(values: &[f64]) -> u64 {
    digest_words(values.iter().map(|v| v.to_bits()))
}

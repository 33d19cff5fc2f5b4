//! Keyed green/red vocabulary partitions.
//!
//! A green mask is a deterministic, exactly balanced partition of the
//! vocabulary derived from a single context token and a secret key. Both
//! injection and detection reconstruct the same masks from the same inputs,
//! so the construction is pinned to the bit level (see
//! `docs/mask-construction.md`):
//!
//! 1. `seed = mix64(mix64(key ^ KEY_WHITEN) ^ mix64(context + SPLIT_GAMMA))`
//! 2. run a front-to-back Fisher-Yates shuffle of `[0, |V|)` driven by a
//!    SplitMix64 stream seeded with `seed`, stopping after
//!    `g = floor(gamma * |V|)` swaps;
//! 3. the first `g` entries of the partially shuffled array are the green
//!    tokens.
//!
//! Exact balance (`popcount = floor(gamma * |V|)` for every context and key)
//! is what makes the detector's null variance hold without correction terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{digest_words, mix64, Mix64Stream, SPLIT_GAMMA};

/// Whitening constant folded into the key before mixing, so that a zero key
/// still produces a well-spread seed.
pub const KEY_WHITEN: u64 = 0xA076_1D64_78BD_642F;

/// An indexed token set with a reserved MASK sentinel. Token ids are dense
/// integers `[0, size)`; the mask id lives outside that range and is never
/// part of any green set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    mask_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    surface: Option<Vec<String>>,
}

impl Vocabulary {
    /// A vocabulary of `size` real tokens with the MASK sentinel at id `size`.
    pub fn new(size: usize) -> Result<Self> {
        Self::with_mask_id(size, size as u32)
    }

    pub fn with_mask_id(size: usize, mask_id: u32) -> Result<Self> {
        if size < 4 {
            return Err(Error::VocabTooSmall { size });
        }
        if (mask_id as usize) < size {
            return Err(Error::MaskIdInRange {
                mask_id,
                vocab_size: size,
            });
        }
        Ok(Self {
            size,
            mask_id,
            surface: None,
        })
    }

    pub fn with_surface(mut self, surface: Vec<String>) -> Result<Self> {
        if surface.len() != self.size {
            return Err(Error::Config(format!(
                "surface table has {} entries for vocabulary of size {}",
                surface.len(),
                self.size
            )));
        }
        self.surface = Some(surface);
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask_id(&self) -> u32 {
        self.mask_id
    }

    pub fn surface_of(&self, token: u32) -> Option<&str> {
        self.surface
            .as_ref()
            .and_then(|s| s.get(token as usize))
            .map(String::as_str)
    }

    /// True iff `token` is a real (watermarkable) token id.
    pub fn contains(&self, token: u32) -> bool {
        (token as usize) < self.size
    }

    pub fn check_token(&self, token: u32) -> Result<()> {
        if self.contains(token) {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.size,
            })
        }
    }
}

/// A 64-bit opaque secret. Two roles exist per deployment: the left key and
/// the right key. Keys are compared by value only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WatermarkKey(pub u64);

impl WatermarkKey {
    /// Parses a key from exactly 16 hex digits.
    pub fn from_hex(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.len() != 16 || !t.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::BadKeyFormat {
                input: s.to_string(),
            });
        }
        Ok(Self(u64::from_str_radix(t, 16).expect("validated hex")))
    }

    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

/// Seed for the green-mask permutation of a (key, context token) pair.
#[inline]
pub fn mask_seed(key: WatermarkKey, context_token: u32) -> u64 {
    let k = mix64(key.0 ^ KEY_WHITEN);
    let c = mix64(u64::from(context_token).wrapping_add(SPLIT_GAMMA));
    mix64(k ^ c)
}

/// An immutable green/red partition over the real-token range.
///
/// The all-zero EMPTY mask represents "no constraint" when a neighbor is
/// unavailable; every membership test on it is false.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreenMask {
    words: Vec<u64>,
    len: usize,
    ones: usize,
}

impl GreenMask {
    fn zeroed(len: usize) -> Self {
        Self {
            words: vec![0u64; len.div_ceil(64)],
            len,
            ones: 0,
        }
    }

    #[inline]
    fn set(&mut self, idx: u32) {
        let w = (idx / 64) as usize;
        let b = idx % 64;
        debug_assert_eq!(self.words[w] >> b & 1, 0);
        self.words[w] |= 1u64 << b;
        self.ones += 1;
    }

    /// Number of token ids the mask covers (= |V|).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.ones == 0
    }

    /// Count of green tokens.
    pub fn popcount(&self) -> usize {
        self.ones
    }

    /// Membership test with range checking.
    pub fn is_green(&self, token: u32) -> Result<bool> {
        if (token as usize) >= self.len {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.len,
            });
        }
        Ok(self.test(token))
    }

    /// Membership test for pre-validated token ids.
    #[inline]
    pub(crate) fn test(&self, token: u32) -> bool {
        self.words[(token / 64) as usize] >> (token % 64) & 1 == 1
    }

    /// Iterator over green token ids in ascending order.
    pub fn iter_green(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let base = wi as u32 * 64;
            let mut rem = w;
            std::iter::from_fn(move || {
                if rem == 0 {
                    None
                } else {
                    let b = rem.trailing_zeros();
                    rem &= rem - 1;
                    Some(base + b)
                }
            })
        })
    }

    /// 64-bit digest of the bit pattern, for audit records and conformance
    /// replay.
    pub fn digest(&self) -> u64 {
        digest_words(self.words.iter().copied().chain([self.len as u64]))
    }

    /// Canonical hex dump: bytes in ascending token order, token `8*i + j`
    /// at bit `j` of byte `i`, two lowercase hex digits per byte.
    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(self.len.div_ceil(8) * 2);
        for i in 0..self.len.div_ceil(8) {
            let w = self.words[i / 8];
            let byte = (w >> ((i % 8) * 8)) as u8;
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Accounted size of the mask storage in bytes.
    pub fn accounted_bytes(&self) -> u64 {
        (self.words.len() * 8 + std::mem::size_of::<Self>()) as u64
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::GammaOutOfRange { gamma });
    }
    Ok(())
}

/// Exact green-set size for a vocabulary and fraction.
pub fn green_count(vocab_size: usize, gamma: f64) -> usize {
    (gamma * vocab_size as f64).floor() as usize
}

/// Reusable scratch for repeated mask construction. The permutation buffer
/// dominates the constructor's working set, so hot paths (the injector, the
/// detector's cache fill) keep one of these alive instead of reallocating.
#[derive(Debug, Clone)]
pub struct GreenMaskBuilder {
    perm: Vec<u32>,
}

impl GreenMaskBuilder {
    pub fn new() -> Self {
        Self { perm: Vec::new() }
    }

    /// Accounted size of the scratch buffer in bytes.
    pub fn accounted_bytes(&self) -> u64 {
        (self.perm.capacity() * 4 + std::mem::size_of::<Self>()) as u64
    }

    pub fn build(
        &mut self,
        context_token: u32,
        key: WatermarkKey,
        vocab: &Vocabulary,
        gamma: f64,
    ) -> Result<GreenMask> {
        vocab.check_token(context_token)?;
        check_gamma(gamma)?;
        let n = vocab.size();
        let g = green_count(n, gamma);

        self.perm.clear();
        self.perm.extend(0..n as u32);
        let mut rng = Mix64Stream::new(mask_seed(key, context_token));
        let mut mask = GreenMask::zeroed(n);
        // Front-to-back Fisher-Yates, stopped after g swaps: the prefix it
        // produces is identical to the prefix of the full shuffle.
        for i in 0..g {
            let j = i + rng.next_below((n - i) as u64) as usize;
            self.perm.swap(i, j);
            mask.set(self.perm[i]);
        }
        debug_assert_eq!(mask.popcount(), g);
        Ok(mask)
    }
}

impl Default for GreenMaskBuilder {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic keyed partition: the set of green tokens induced by a
/// single context token. Identical inputs yield bit-identical masks.
pub fn green_mask(
    context_token: u32,
    key: WatermarkKey,
    vocab: &Vocabulary,
    gamma: f64,
) -> Result<GreenMask> {
    GreenMaskBuilder::new().build(context_token, key, vocab, gamma)
}

/// The EMPTY mask: no token is green. Used when a neighbor is unavailable.
pub fn empty_mask(vocab: &Vocabulary) -> GreenMask {
    GreenMask::zeroed(vocab.size())
}

/// Membership test, range-checked. Equivalent to `mask.is_green(token)`.
pub fn is_green(mask: &GreenMask, token: u32) -> Result<bool> {
    mask.is_green(token)
}

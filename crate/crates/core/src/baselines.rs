//! Comparison watermarks.
//!
//! Two desk-scale reference points: a left-only green-list watermark in the
//! classic autoregressive style, and a simplified inverse-table scheme that
//! biases the current token so that an already-revealed *right* neighbor
//! comes out green under the forward hash. The inverse scheme precomputes,
//! for every target token `u`, the set of contexts `v` with
//! `u in green_mask(v, key)` — a |V|^2-bit table that trades memory for
//! per-step time. Both are detected with the standard left-context
//! green-fraction z-test over adjacent pairs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inject::{BiasRecord, BiasReport, BoundaryMode, StepInjector};
use crate::state::SequenceState;
use crate::vocab::{GreenMaskBuilder, Vocabulary, WatermarkKey};

/// Default cap on |V| for inverse-table construction.
pub const DEFAULT_TABLE_CAP: usize = 16_384;

fn check_pos(logits: &[f64], state: &SequenceState, pos: usize, vocab: &Vocabulary) -> Result<()> {
    if pos >= state.len() || state.is_revealed(pos) {
        return Err(Error::Usage(format!(
            "position {pos} is revealed or out of range"
        )));
    }
    if logits.len() != vocab.size() {
        return Err(Error::Usage(format!(
            "logit vector of {} entries for vocabulary of {}",
            logits.len(),
            vocab.size()
        )));
    }
    Ok(())
}

fn apply_left_only(
    logits: &mut [f64],
    state: &SequenceState,
    pos: usize,
    key: WatermarkKey,
    delta: f64,
    gamma: f64,
    vocab: &Vocabulary,
    builder: &mut GreenMaskBuilder,
) -> Result<BiasRecord> {
    check_pos(logits, state, pos, vocab)?;
    let left_ctx = state.revealed_left(pos).filter(|&t| vocab.contains(t));
    let mut digest = 0u64;
    if let Some(a) = left_ctx {
        let mask = builder.build(a, key, vocab, gamma)?;
        digest = mask.digest();
        for g in mask.iter_green() {
            logits[g as usize] += delta;
        }
    }
    Ok(BiasRecord {
        mode: if left_ctx.is_some() {
            BoundaryMode::LeftOnly
        } else {
            BoundaryMode::None
        },
        left_ctx,
        right_ctx: None,
        left_mask_digest: digest,
        right_mask_digest: 0,
        delta,
    })
}

/// AR-style watermark: bias toward the green set of the revealed immediate
/// left neighbor only; identity when it is unavailable.
pub fn inject_left_only(
    logits: &[f64],
    state: &SequenceState,
    pos: usize,
    key: WatermarkKey,
    delta: f64,
    gamma: f64,
    vocab: &Vocabulary,
) -> Result<(Vec<f64>, BiasReport)> {
    let mut out = logits.to_vec();
    let mut builder = GreenMaskBuilder::new();
    let record = apply_left_only(&mut out, state, pos, key, delta, gamma, vocab, &mut builder)?;
    Ok((out, record.report()))
}

/// Per-target-token predecessor sets: `rows[u]` is the bit vector over
/// contexts `v` with `u in green_mask(v, key)`. Rows are stored contiguously
/// (`words_per_row` words each).
#[derive(Debug, Clone, Serialize)]
pub struct InverseTable {
    #[serde(skip)]
    words: Vec<u64>,
    words_per_row: usize,
    vocab_size: usize,
    gamma: f64,
    key: WatermarkKey,
    pub memory_bytes: u64,
    pub build_ms: f64,
}

impl InverseTable {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// True iff choosing context `v` makes target `u` green.
    pub fn makes_green(&self, target: u32, context: u32) -> bool {
        let row = target as usize * self.words_per_row;
        self.words[row + (context / 64) as usize] >> (context % 64) & 1 == 1
    }

    /// Number of contexts under which `target` is green.
    pub fn row_popcount(&self, target: u32) -> usize {
        let row = target as usize * self.words_per_row;
        self.words[row..row + self.words_per_row]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    fn row(&self, target: u32) -> &[u64] {
        let row = target as usize * self.words_per_row;
        &self.words[row..row + self.words_per_row]
    }
}

/// Builds the inverse table by enumerating the forward hash for every
/// context. Time Theta(|V|^2); memory |V| * ceil(|V|/8) bytes plus constant
/// overhead, which is the tradeoff this baseline exists to measure.
pub fn build_inverse_table(
    key: WatermarkKey,
    vocab: &Vocabulary,
    gamma: f64,
) -> Result<InverseTable> {
    build_inverse_table_capped(key, vocab, gamma, DEFAULT_TABLE_CAP)
}

pub fn build_inverse_table_capped(
    key: WatermarkKey,
    vocab: &Vocabulary,
    gamma: f64,
    cap: usize,
) -> Result<InverseTable> {
    let n = vocab.size();
    if n > cap {
        return Err(Error::TableCapExceeded {
            vocab_size: n,
            cap,
        });
    }
    let start = std::time::Instant::now();
    let words_per_row = n.div_ceil(64);
    let mut words = vec![0u64; n * words_per_row];
    let mut builder = GreenMaskBuilder::new();
    for context in 0..n as u32 {
        let mask = builder.build(context, key, vocab, gamma)?;
        for target in mask.iter_green() {
            let row = target as usize * words_per_row;
            words[row + (context / 64) as usize] |= 1u64 << (context % 64);
        }
    }
    let memory_bytes = (words.len() * 8 + std::mem::size_of::<InverseTable>()) as u64;
    Ok(InverseTable {
        words,
        words_per_row,
        vocab_size: n,
        gamma,
        key,
        memory_bytes,
        build_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn apply_dmark(
    logits: &mut [f64],
    state: &SequenceState,
    pos: usize,
    table: &InverseTable,
    key: WatermarkKey,
    delta: f64,
    vocab: &Vocabulary,
) -> Result<BiasRecord> {
    check_pos(logits, state, pos, vocab)?;
    if table.key != key || table.vocab_size != vocab.size() {
        return Err(Error::TableKeyMismatch);
    }
    let right_ctx = state.revealed_right(pos).filter(|&t| vocab.contains(t));
    if let Some(u) = right_ctx {
        for (wi, &w) in table.row(u).iter().enumerate() {
            let mut rem = w;
            while rem != 0 {
                let b = rem.trailing_zeros();
                rem &= rem - 1;
                logits[wi * 64 + b as usize] += delta;
            }
        }
    }
    Ok(BiasRecord {
        mode: if right_ctx.is_some() {
            BoundaryMode::RightOnly
        } else {
            BoundaryMode::None
        },
        left_ctx: None,
        right_ctx,
        left_mask_digest: 0,
        right_mask_digest: 0,
        delta,
    })
}

/// Inverse-table watermark: when the right neighbor `u` is revealed, bias
/// every candidate `v` that would make `u` green under the forward hash;
/// identity otherwise.
pub fn inject_dmark_style(
    logits: &[f64],
    state: &SequenceState,
    pos: usize,
    table: &InverseTable,
    key: WatermarkKey,
    delta: f64,
    vocab: &Vocabulary,
) -> Result<(Vec<f64>, BiasReport)> {
    let mut out = logits.to_vec();
    let record = apply_dmark(&mut out, state, pos, table, key, delta, vocab)?;
    Ok((out, record.report()))
}

/// Left-context pair greenness: entry `i` (for `i >= 1`) says whether
/// `tokens[i]` is green under the mask keyed by `tokens[i-1]`. This is the
/// detection signal for both baselines: the left-only scheme biases the
/// current token toward its left mask, and the inverse scheme chooses the
/// current token so the pair it forms with its right neighbor is green.
pub fn score_left_green(
    tokens: &[u32],
    key: WatermarkKey,
    gamma: f64,
    vocab: &Vocabulary,
) -> Result<Vec<bool>> {
    if tokens.len() < 2 {
        return Err(Error::SequenceTooShort {
            got: tokens.len(),
            min: 2,
        });
    }
    for &t in tokens {
        vocab.check_token(t)?;
    }
    let mut builder = GreenMaskBuilder::new();
    let mut out = Vec::with_capacity(tokens.len() - 1);
    for i in 1..tokens.len() {
        let mask = builder.build(tokens[i - 1], key, vocab, gamma)?;
        out.push(mask.test(tokens[i]));
    }
    Ok(out)
}

/// Standardized green-fraction statistic:
/// `(count - gamma*T) / sqrt(T * gamma * (1 - gamma))`.
pub fn green_fraction_z(greens: &[bool], gamma: f64) -> Result<f64> {
    if greens.is_empty() {
        return Err(Error::Data("empty green indicator list".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::GammaOutOfRange { gamma });
    }
    let t = greens.len() as f64;
    let count = greens.iter().filter(|&&g| g).count() as f64;
    Ok((count - gamma * t) / (t * gamma * (1.0 - gamma)).sqrt())
}

/// Decode hook for the left-only baseline.
#[derive(Debug, Clone)]
pub struct LeftOnlyInjector {
    key: WatermarkKey,
    delta: f64,
    gamma: f64,
    vocab: Vocabulary,
    builder: GreenMaskBuilder,
}

impl LeftOnlyInjector {
    pub fn new(key: WatermarkKey, delta: f64, gamma: f64, vocab: Vocabulary) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("bad delta {delta}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::GammaOutOfRange { gamma });
        }
        Ok(Self {
            key,
            delta,
            gamma,
            vocab,
            builder: GreenMaskBuilder::new(),
        })
    }
}

impl StepInjector for LeftOnlyInjector {
    fn bias(
        &mut self,
        logits: &mut [f64],
        state: &SequenceState,
        pos: usize,
    ) -> Result<BiasRecord> {
        apply_left_only(
            logits,
            state,
            pos,
            self.key,
            self.delta,
            self.gamma,
            &self.vocab,
            &mut self.builder,
        )
    }

    fn accounted_overhead_bytes(&self) -> u64 {
        let mask_bytes = (self.vocab.size().div_ceil(64) * 8) as u64;
        mask_bytes + self.builder.accounted_bytes() + std::mem::size_of::<Self>() as u64
    }

    fn method_name(&self) -> &'static str {
        "left"
    }
}

/// Decode hook for the inverse-table baseline. Holds the (shared) table, so
/// its accounted overhead carries the full |V|^2-bit cost.
#[derive(Debug, Clone)]
pub struct DmarkInjector {
    table: std::sync::Arc<InverseTable>,
    key: WatermarkKey,
    delta: f64,
    vocab: Vocabulary,
}

impl DmarkInjector {
    pub fn new(
        table: std::sync::Arc<InverseTable>,
        key: WatermarkKey,
        delta: f64,
        vocab: Vocabulary,
    ) -> Result<Self> {
        if table.key != key || table.vocab_size != vocab.size() {
            return Err(Error::TableKeyMismatch);
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("bad delta {delta}")));
        }
        Ok(Self {
            table,
            key,
            delta,
            vocab,
        })
    }

    pub fn table(&self) -> &InverseTable {
        &self.table
    }
}

impl StepInjector for DmarkInjector {
    fn bias(
        &mut self,
        logits: &mut [f64],
        state: &SequenceState,
        pos: usize,
    ) -> Result<BiasRecord> {
        apply_dmark(
            logits,
            state,
            pos,
            &self.table,
            self.key,
            self.delta,
            &self.vocab,
        )
    }

    fn accounted_overhead_bytes(&self) -> u64 {
        self.table.memory_bytes + std::mem::size_of::<Self>() as u64
    }

    fn method_name(&self) -> &'static str {
        "dmark"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inject::{inject, InjectorConfig};
    use crate::rng::Mix64Stream;
    use crate::vocab::green_mask;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::new(n).unwrap()
    }

    const KEY: WatermarkKey = WatermarkKey(0x0F0F_1234_5678_9ABC);

    #[test]
    fn left_only_identity_when_left_masked() {
        let v = vocab(8);
        let s = SequenceState::new(&[3], 5, &v).unwrap();
        let logits = vec![0.5; 8];
        // Position 3: left neighbor masked.
        let (out, report) = inject_left_only(&logits, &s, 3, KEY, 2.0, 0.5, &v).unwrap();
        assert_eq!(out, logits);
        assert!(!report.left_active);
    }

    #[test]
    fn left_only_equals_lr_with_empty_right() {
        let v = vocab(16);
        let mut s = SequenceState::new(&[5], 4, &v).unwrap();
        s.reveal(2, 9).unwrap(); // right neighbor of pos 1 revealed
        let logits: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let (left_out, _) = inject_left_only(&logits, &s, 1, KEY, 1.5, 0.5, &v).unwrap();
        // LR with delta on a shared key, then subtract the right-side mask
        // contribution: equivalently, LR where the right side never fires.
        // Position 3 has a revealed *left* neighbor only in this state:
        let s2 = {
            let mut s2 = SequenceState::new(&[5], 4, &v).unwrap();
            s2.reveal(1, 9).unwrap();
            s2
        };
        let cfg = InjectorConfig::new(KEY, WatermarkKey(0x9999), 1.5, 0.5).unwrap();
        let (lr_out, report) = inject(&logits, &s2, 2, &cfg, &v).unwrap();
        assert!(report.left_active && !report.right_active);
        // Same left context (token 9), same key: identical bias pattern.
        let (left_out2, _) = inject_left_only(&logits, &s2, 2, KEY, 1.5, 0.5, &v).unwrap();
        assert_eq!(lr_out, left_out2);
        // And the pos-1 case biases by the mask of token 5.
        let m = green_mask(5, KEY, &v, 0.5).unwrap();
        for t in 0..16u32 {
            let expect = logits[t as usize] + if m.test(t) { 1.5 } else { 0.0 };
            assert_eq!(left_out[t as usize], expect);
        }
    }

    #[test]
    fn left_only_green_rate_closed_form() {
        // Softmax-sampling from uniform logits biased by delta on the green
        // set picks a green token with probability
        // gamma*e^delta / (gamma*e^delta + 1 - gamma).
        let v = vocab(64);
        let delta = 1.0;
        let expect = 0.5 * f64::exp(delta) / (0.5 * f64::exp(delta) + 0.5);
        let mut rng = Mix64Stream::new(0xABCDEF);
        let mut builder = GreenMaskBuilder::new();
        let trials = 20_000;
        let mut greens = 0usize;
        for _ in 0..trials {
            let ctx = rng.next_below(64) as u32;
            let mut s = SequenceState::new(&[ctx], 3, &v).unwrap();
            s.reveal(2, 0).unwrap(); // irrelevant right neighbor
            let (biased, _) =
                inject_left_only(&vec![0.0; 64], &s, 1, KEY, delta, 0.5, &v).unwrap();
            let weights: Vec<f64> = biased.iter().map(|&l| l.exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.next_f64() * total;
            let mut tok = 63u32;
            for (i, &w) in weights.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    tok = i as u32;
                    break;
                }
            }
            if builder.build(ctx, KEY, &v, 0.5).unwrap().test(tok) {
                greens += 1;
            }
        }
        let rate = greens as f64 / trials as f64;
        let sigma = (expect * (1.0 - expect) / trials as f64).sqrt();
        assert!(
            (rate - expect).abs() < 4.0 * sigma,
            "rate {rate} vs closed form {expect}"
        );
    }

    #[test]
    fn inverse_table_cells_match_forward_hash_v8() {
        let v = vocab(8);
        let table = build_inverse_table(KEY, &v, 0.5).unwrap();
        for ctx in 0..8u32 {
            let mask = green_mask(ctx, KEY, &v, 0.5).unwrap();
            for target in 0..8u32 {
                assert_eq!(
                    table.makes_green(target, ctx),
                    mask.test(target),
                    "target {target} ctx {ctx}"
                );
            }
        }
    }

    #[test]
    fn inverse_table_memory_scaling() {
        let t1 = build_inverse_table(KEY, &vocab(1024), 0.5).unwrap();
        let t4 = build_inverse_table(KEY, &vocab(4096), 0.5).unwrap();
        let ratio = t4.memory_bytes as f64 / t1.memory_bytes as f64;
        assert!((ratio - 16.0).abs() / 16.0 < 0.05, "ratio {ratio}");
        assert!(t1.memory_bytes >= 1024 * 128);
    }

    #[test]
    fn inverse_table_row_popcounts_near_gamma_v() {
        // Row popcounts are Binomial(|V|, gamma) across contexts; with a
        // fixed key almost every row sits within 3 sigma and all within 5.
        let n = 256usize;
        let v = vocab(n);
        let table = build_inverse_table(KEY, &v, 0.5).unwrap();
        let mean = 128.0;
        let sigma = (n as f64 * 0.25).sqrt();
        let mut within3 = 0usize;
        for u in 0..n as u32 {
            let p = table.row_popcount(u) as f64;
            assert!((p - mean).abs() <= 5.0 * sigma, "row {u}: popcount {p}");
            if (p - mean).abs() <= 3.0 * sigma {
                within3 += 1;
            }
        }
        assert!(within3 as f64 >= 0.95 * n as f64);
    }

    #[test]
    fn table_cap_is_enforced() {
        let v = vocab(64);
        assert!(matches!(
            build_inverse_table_capped(KEY, &v, 0.5, 32),
            Err(Error::TableCapExceeded { .. })
        ));
    }

    #[test]
    fn dmark_identity_without_right_neighbor() {
        let v = vocab(8);
        let table = build_inverse_table(KEY, &v, 0.5).unwrap();
        let s = SequenceState::new(&[3], 5, &v).unwrap();
        let logits = vec![1.0; 8];
        let (out, report) = inject_dmark_style(&logits, &s, 2, &table, KEY, 2.0, &v).unwrap();
        assert_eq!(out, logits);
        assert!(!report.right_active);
    }

    #[test]
    fn dmark_biased_set_by_enumeration_v8() {
        let v = vocab(8);
        let table = build_inverse_table(KEY, &v, 0.5).unwrap();
        let mut s = SequenceState::new(&[3], 5, &v).unwrap();
        s.reveal(3, 6).unwrap(); // right neighbor of pos 2 is u = 6
        let logits = vec![0.0; 8];
        let (out, _) = inject_dmark_style(&logits, &s, 2, &table, KEY, 2.0, &v).unwrap();
        for cand in 0..8u32 {
            let makes_green = green_mask(cand, KEY, &v, 0.5).unwrap().test(6);
            let expect = if makes_green { 2.0 } else { 0.0 };
            assert_eq!(out[cand as usize], expect, "candidate {cand}");
        }
    }

    #[test]
    fn dmark_key_mismatch_is_config_error() {
        let v = vocab(8);
        let table = build_inverse_table(KEY, &v, 0.5).unwrap();
        let s = SequenceState::new(&[3], 5, &v).unwrap();
        assert!(matches!(
            inject_dmark_style(&vec![0.0; 8], &s, 2, &table, WatermarkKey(1), 2.0, &v),
            Err(Error::TableKeyMismatch)
        ));
    }

    #[test]
    fn dmark_pairs_green_at_high_delta() {
        // Monte Carlo: picking the argmax among biased uniform logits makes
        // the generated (v, u) pair green under the forward hash whenever
        // the biased set is nonempty (which it essentially always is).
        let v = vocab(64);
        let table = build_inverse_table(KEY, &v, 0.5).unwrap();
        let mut rng = Mix64Stream::new(5);
        let mut green_pairs = 0usize;
        let trials = 500;
        for _ in 0..trials {
            let u = rng.next_below(64) as u32;
            let mut s = SequenceState::new(&[0], 4, &v).unwrap();
            s.reveal(2, u).unwrap();
            let logits: Vec<f64> = (0..64).map(|_| rng.next_f64()).collect();
            let (out, _) = inject_dmark_style(&logits, &s, 1, &table, KEY, 10.0, &v).unwrap();
            let chosen = out
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0 as u32;
            if green_mask(chosen, KEY, &v, 0.5).unwrap().test(u) {
                green_pairs += 1;
            }
        }
        assert!(
            green_pairs as f64 / trials as f64 > 0.9,
            "green pair rate {green_pairs}/{trials}"
        );
    }

    #[test]
    fn green_fraction_z_behaves() {
        let greens = vec![true; 100];
        let z = green_fraction_z(&greens, 0.5).unwrap();
        assert!((z - 10.0).abs() < 1e-12); // (100-50)/sqrt(25)
        let half: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        assert_eq!(green_fraction_z(&half, 0.5).unwrap(), 0.0);
        assert!(green_fraction_z(&[], 0.5).is_err());
    }

    #[test]
    fn score_left_green_matches_masks() {
        let v = vocab(32);
        let mut rng = Mix64Stream::new(66);
        let tokens: Vec<u32> = (0..40).map(|_| rng.next_below(32) as u32).collect();
        let greens = score_left_green(&tokens, KEY, 0.5, &v).unwrap();
        assert_eq!(greens.len(), 39);
        for i in 1..tokens.len() {
            let m = green_mask(tokens[i - 1], KEY, &v, 0.5).unwrap();
            assert_eq!(greens[i - 1], m.test(tokens[i]));
        }
    }
}

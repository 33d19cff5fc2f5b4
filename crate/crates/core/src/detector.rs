//! Schedule-agnostic watermark detection.
//!
//! Detection reads only the final token sequence: for each interior position
//! the left neighbor keys a green set that the token either hits or misses
//! (`m_L`), the right neighbor likewise (`m_R`), and the ternary score is
//! `s = m_L + m_R - 1`. Under the null of keyless text with exactly balanced
//! partitions, `E[s] = 0` and `Var(s) = 1/2` per token; weak local
//! dependence between adjacent scores is absorbed by calibrating `sigma^2`
//! and the decision thresholds empirically on unwatermarked text.
//!
//! Boundary positions have only one defined side, so only interior positions
//! are scored: a span of `L` tokens yields `T = L - 2` scores. This keeps
//! the score ternary and the null mean exactly zero.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::inject::InjectorConfig;
use crate::rng::digest_words;
use crate::vocab::{GreenMask, GreenMaskBuilder, Vocabulary};

/// Scored spans shorter than this yield an "insufficient length" error
/// instead of a decision.
pub const DEFAULT_MIN_SCORED_LEN: usize = 16;

const CALIBRATION_FORMAT: &str = "lrdwm-calibration";
const CALIBRATION_VERSION: u32 = 1;

/// Per-token ternary detection signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenScore {
    /// `m_left + m_right - 1`, in {-1, 0, +1}.
    pub value: i8,
    pub m_left: bool,
    pub m_right: bool,
    /// Sides with a defined neighbor. Interior-only scoring makes this 2
    /// for every emitted score.
    pub defined_sides: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub z: f64,
    pub score_sum: i64,
    /// Count of scored (interior) tokens.
    pub scored_len: usize,
    pub decision: bool,
    pub threshold_used: f64,
    pub target_fpr: f64,
    pub sigma2: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_token: Vec<TokenScore>,
}

impl DetectionResult {
    /// Drops the per-token detail (for compact reports).
    pub fn without_per_token(mut self) -> Self {
        self.per_token.clear();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub fpr: f64,
    /// Empirical null quantile actually used for decisions.
    pub z: f64,
    /// Gaussian tail value, reported for comparison.
    pub gaussian_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub sequences: usize,
    pub seq_len: usize,
    pub uniform_len: bool,
    /// Digest of the calibration corpus tokens (hex).
    pub source_digest: String,
    pub gamma: f64,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub format: String,
    pub version: u32,
    /// Pooled per-token score variance over the null corpus.
    pub sigma2: f64,
    pub thresholds: Vec<ThresholdEntry>,
    pub corpus_meta: CorpusMeta,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl NullCalibration {
    pub fn threshold_for(&self, fpr: f64) -> Result<f64> {
        self.thresholds
            .iter()
            .find(|t| (t.fpr - fpr).abs() < 1e-12)
            .map(|t| t.z)
            .ok_or(Error::ThresholdMissing { fpr })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cal: NullCalibration = serde_json::from_str(s)?;
        if cal.format != CALIBRATION_FORMAT {
            return Err(Error::Data(format!(
                "not a calibration file (format {:?})",
                cal.format
            )));
        }
        if cal.version != CALIBRATION_VERSION {
            return Err(Error::Data(format!(
                "unsupported calibration version {}",
                cal.version
            )));
        }
        if !(cal.sigma2 > 0.0) {
            return Err(Error::Data("calibration sigma2 must be positive".into()));
        }
        Ok(cal)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Lazily filled per-context mask table for batch scoring. Detection-side
/// only: generation keeps its two-transient-mask footprint, but a detector
/// scoring thousands of sequences reuses each context's mask.
pub struct MaskCache {
    vocab: Vocabulary,
    cfg: InjectorConfig,
    left: Vec<OnceLock<GreenMask>>,
    right: Vec<OnceLock<GreenMask>>,
}

impl MaskCache {
    pub fn new(cfg: &InjectorConfig, vocab: &Vocabulary) -> Result<Self> {
        cfg.validate()?;
        let n = vocab.size();
        Ok(Self {
            vocab: vocab.clone(),
            cfg: *cfg,
            left: (0..n).map(|_| OnceLock::new()).collect(),
            right: (0..n).map(|_| OnceLock::new()).collect(),
        })
    }

    /// Left-key mask for a validated context token.
    pub fn left_mask(&self, ctx: u32) -> &GreenMask {
        self.left[ctx as usize].get_or_init(|| {
            GreenMaskBuilder::new()
                .build(ctx, self.cfg.key_left, &self.vocab, self.cfg.gamma)
                .expect("validated context")
        })
    }

    pub fn right_mask(&self, ctx: u32) -> &GreenMask {
        self.right[ctx as usize].get_or_init(|| {
            GreenMaskBuilder::new()
                .build(ctx, self.cfg.key_right, &self.vocab, self.cfg.gamma)
                .expect("validated context")
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &InjectorConfig {
        &self.cfg
    }
}

fn validate_tokens(tokens: &[u32], vocab: &Vocabulary) -> Result<()> {
    for &t in tokens {
        vocab.check_token(t)?;
    }
    Ok(())
}

fn scores_via(
    tokens: &[u32],
    mut left_test: impl FnMut(u32, u32) -> Result<bool>,
    mut right_test: impl FnMut(u32, u32) -> Result<bool>,
) -> Result<Vec<TokenScore>> {
    let mut out = Vec::with_capacity(tokens.len() - 2);
    for i in 1..tokens.len() - 1 {
        let ml = left_test(tokens[i - 1], tokens[i])?;
        let mr = right_test(tokens[i + 1], tokens[i])?;
        out.push(TokenScore {
            value: ml as i8 + mr as i8 - 1,
            m_left: ml,
            m_right: mr,
            defined_sides: 2,
        });
    }
    Ok(out)
}

/// Ternary scores for every interior position of a final token sequence.
/// Reads nothing but the tokens: no schedule, no model.
pub fn score_tokens(
    tokens: &[u32],
    cfg: &InjectorConfig,
    vocab: &Vocabulary,
) -> Result<Vec<TokenScore>> {
    cfg.validate()?;
    if tokens.len() < 3 {
        return Err(Error::SequenceTooShort {
            got: tokens.len(),
            min: 3,
        });
    }
    validate_tokens(tokens, vocab)?;
    let mut builder = GreenMaskBuilder::new();
    let mut builder2 = GreenMaskBuilder::new();
    scores_via(
        tokens,
        |a, t| Ok(builder.build(a, cfg.key_left, vocab, cfg.gamma)?.test(t)),
        |b, t| Ok(builder2.build(b, cfg.key_right, vocab, cfg.gamma)?.test(t)),
    )
}

/// Cache-backed variant of [`score_tokens`]; identical output.
pub fn score_tokens_cached(tokens: &[u32], cache: &MaskCache) -> Result<Vec<TokenScore>> {
    if tokens.len() < 3 {
        return Err(Error::SequenceTooShort {
            got: tokens.len(),
            min: 3,
        });
    }
    validate_tokens(tokens, cache.vocab())?;
    scores_via(
        tokens,
        |a, t| Ok(cache.left_mask(a).test(t)),
        |b, t| Ok(cache.right_mask(b).test(t)),
    )
}

/// Standardized sum: `Z = sum(s) / (sqrt(sigma2) * sqrt(T))`.
pub fn z_statistic(scores: &[TokenScore], sigma2: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Data("cannot standardize an empty score list".into()));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Config(format!("sigma2 must be positive, got {sigma2}")));
    }
    let sum: i64 = scores.iter().map(|s| s.value as i64).sum();
    Ok(sum as f64 / (sigma2.sqrt() * (scores.len() as f64).sqrt()))
}

/// Upper-tail standard-normal quantile for a target FPR.
pub fn gaussian_tail_z(fpr: f64) -> f64 {
    statrs::distribution::Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(1.0 - fpr)
}

/// Empirical decision threshold from null statistics sorted descending: the
/// `floor(n*fpr) + 1`-th largest value, so exactly `floor(n*fpr)` null
/// samples exceed it strictly.
pub fn empirical_threshold(sorted_desc: &[f64], fpr: f64) -> f64 {
    let n = sorted_desc.len();
    let k = ((n as f64 * fpr).floor() as usize + 1).min(n);
    sorted_desc[k - 1]
}

/// Estimates the null score variance and per-FPR decision thresholds from an
/// unwatermarked corpus.
///
/// `sigma2` is the pooled per-token variance across the whole corpus (which
/// absorbs the local dependence between adjacent scores); each threshold is
/// the empirical `(1 - fpr)` quantile of the per-sequence Z over the corpus,
/// with the Gaussian tail value recorded alongside for comparison.
pub fn calibrate_null(
    null_corpus: &[Vec<u32>],
    cfg: &InjectorConfig,
    vocab: &Vocabulary,
    target_fprs: &[f64],
) -> Result<NullCalibration> {
    cfg.validate()?;
    if null_corpus.is_empty() {
        return Err(Error::Data("calibration corpus is empty".into()));
    }
    if target_fprs.is_empty() {
        return Err(Error::Config("no target FPRs given".into()));
    }
    for &f in target_fprs {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("target FPR {f} outside (0, 1)")));
        }
    }
    let cache = MaskCache::new(cfg, vocab)?;
    // Integer accumulators keep the reduction exact (and therefore
    // deterministic under any parallel split).
    let per_seq: Vec<(i64, usize, i64)> = null_corpus
        .par_iter()
        .map(|seq| {
            let scores = score_tokens_cached(seq, &cache)?;
            let sum: i64 = scores.iter().map(|s| s.value as i64).sum();
            let sq: i64 = scores.iter().filter(|s| s.value != 0).count() as i64;
            Ok((sum, scores.len(), sq))
        })
        .collect::<Result<_>>()?;

    let total_tokens: usize = per_seq.iter().map(|&(_, t, _)| t).sum();
    let total_sum: i64 = per_seq.iter().map(|&(s, _, _)| s).sum();
    let total_sq: i64 = per_seq.iter().map(|&(_, _, q)| q).sum();
    let mean = total_sum as f64 / total_tokens as f64;
    let sigma2 = total_sq as f64 / total_tokens as f64 - mean * mean;
    if !(sigma2 > 0.0) {
        return Err(Error::Data(
            "degenerate null corpus: per-token score variance is zero".into(),
        ));
    }

    let mut zs: Vec<f64> = per_seq
        .iter()
        .map(|&(s, t, _)| s as f64 / (sigma2.sqrt() * (t as f64).sqrt()))
        .collect();
    zs.sort_by(|a, b| b.total_cmp(a)); // descending

    let n = zs.len();
    let mut warnings = Vec::new();
    let min_fpr = target_fprs.iter().cloned().fold(f64::MAX, f64::min);
    if (n as f64) < 10.0 / min_fpr {
        warnings.push(format!(
            "calibration corpus of {n} sequences is below 10/min_fpr = {:.0}; \
             empirical quantiles at FPR {min_fpr} are unreliable",
            10.0 / min_fpr
        ));
    }

    let mut thresholds: Vec<ThresholdEntry> = target_fprs
        .iter()
        .map(|&fpr| ThresholdEntry {
            fpr,
            z: empirical_threshold(&zs, fpr),
            gaussian_z: gaussian_tail_z(fpr),
        })
        .collect();
    thresholds.sort_by(|a, b| a.fpr.total_cmp(&b.fpr));

    let seq_len = null_corpus[0].len();
    let uniform_len = null_corpus.iter().all(|s| s.len() == seq_len);
    let source_digest = digest_words(
        null_corpus
            .iter()
            .flat_map(|s| s.iter().map(|&t| t as u64)),
    );

    Ok(NullCalibration {
        format: CALIBRATION_FORMAT.to_string(),
        version: CALIBRATION_VERSION,
        sigma2,
        thresholds,
        corpus_meta: CorpusMeta {
            sequences: n,
            seq_len,
            uniform_len,
            source_digest: format!("{source_digest:016x}"),
            gamma: cfg.gamma,
            vocab_size: vocab.size(),
        },
        warnings,
    })
}

fn check_gamma_supported(cfg: &InjectorConfig, calibration: &NullCalibration) -> Result<()> {
    let balanced = (cfg.gamma - 0.5).abs() < 1e-9;
    let matches_calibration = (calibration.corpus_meta.gamma - cfg.gamma).abs() < 1e-12;
    if balanced || matches_calibration {
        Ok(())
    } else {
        Err(Error::GammaUnsupported { gamma: cfg.gamma })
    }
}

/// Full detection: scores the sequence, standardizes with the calibrated
/// sigma, and compares against the calibrated threshold for `target_fpr`.
/// A pure function of the token sequence — two decodes that produce the same
/// final sequence produce identical results.
pub fn detect(
    tokens: &[u32],
    cfg: &InjectorConfig,
    vocab: &Vocabulary,
    calibration: &NullCalibration,
    target_fpr: f64,
) -> Result<DetectionResult> {
    detect_with_min_len(tokens, cfg, vocab, calibration, target_fpr, DEFAULT_MIN_SCORED_LEN)
}

pub fn detect_with_min_len(
    tokens: &[u32],
    cfg: &InjectorConfig,
    vocab: &Vocabulary,
    calibration: &NullCalibration,
    target_fpr: f64,
    min_scored_len: usize,
) -> Result<DetectionResult> {
    check_gamma_supported(cfg, calibration)?;
    let threshold = calibration.threshold_for(target_fpr)?;
    let scored = tokens.len().saturating_sub(2);
    if scored < min_scored_len {
        return Err(Error::InsufficientLength {
            got: scored,
            min: min_scored_len,
        });
    }
    let scores = score_tokens(tokens, cfg, vocab)?;
    let z = z_statistic(&scores, calibration.sigma2)?;
    let score_sum: i64 = scores.iter().map(|s| s.value as i64).sum();
    Ok(DetectionResult {
        z,
        score_sum,
        scored_len: scores.len(),
        decision: z > threshold,
        threshold_used: threshold,
        target_fpr,
        sigma2: calibration.sigma2,
        per_token: scores,
    })
}

/// Cache-backed batch detection (used by calibration checks and the bench
/// harness). Results are identical to per-sequence [`detect`].
pub fn detect_many(
    sequences: &[Vec<u32>],
    cfg: &InjectorConfig,
    vocab: &Vocabulary,
    calibration: &NullCalibration,
    target_fpr: f64,
) -> Result<Vec<DetectionResult>> {
    check_gamma_supported(cfg, calibration)?;
    let threshold = calibration.threshold_for(target_fpr)?;
    let cache = MaskCache::new(cfg, vocab)?;
    sequences
        .par_iter()
        .map(|tokens| {
            let scored = tokens.len().saturating_sub(2);
            if scored < DEFAULT_MIN_SCORED_LEN {
                return Err(Error::InsufficientLength {
                    got: scored,
                    min: DEFAULT_MIN_SCORED_LEN,
                });
            }
            let scores = score_tokens_cached(tokens, &cache)?;
            let z = z_statistic(&scores, calibration.sigma2)?;
            let score_sum: i64 = scores.iter().map(|s| s.value as i64).sum();
            Ok(DetectionResult {
                z,
                score_sum,
                scored_len: scores.len(),
                decision: z > threshold,
                threshold_used: threshold,
                target_fpr,
                sigma2: calibration.sigma2,
                per_token: scores,
            })
        })
        .collect()
}

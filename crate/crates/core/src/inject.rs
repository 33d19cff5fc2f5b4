//! Two-sided watermark bias.
//!
//! At a masked position, each *revealed* immediate neighbor induces a keyed
//! green set; every candidate logit gains `delta` per green set it belongs
//! to. Unavailable neighbors contribute the EMPTY set (no bias), so boundary
//! and early-schedule positions degrade to single-sided or unbiased sampling.
//! The rule reads only the revealed neighbor values, never the step index or
//! schedule, which is what keeps detection order-agnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::SequenceState;
use crate::vocab::{GreenMask, GreenMaskBuilder, Vocabulary, WatermarkKey};

/// Keys, bias strength, and green fraction for injection (and detection,
/// which reuses the same keyed partitions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectorConfig {
    pub key_left: WatermarkKey,
    pub key_right: WatermarkKey,
    pub delta: f64,
    pub gamma: f64,
}

impl InjectorConfig {
    pub fn new(
        key_left: WatermarkKey,
        key_right: WatermarkKey,
        delta: f64,
        gamma: f64,
    ) -> Result<Self> {
        let cfg = Self {
            key_left,
            key_right,
            delta,
            gamma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "delta must be a nonnegative finite real, got {}",
                self.delta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::GammaOutOfRange { gamma: self.gamma });
        }
        Ok(())
    }

    /// Non-fatal configuration smells (equal keys correlate the two signals).
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.key_left == self.key_right {
            w.push(
                "left and right watermark keys are equal; detection still works but the \
                 two per-token signals are correlated"
                    .to_string(),
            );
        }
        w
    }
}

/// Which sides constrain a position, given the current reveal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    Both,
    LeftOnly,
    RightOnly,
    None,
}

/// Classifies a position by its available constraints. The first position
/// after the prompt can still be left-constrained through the prompt tail;
/// sequence edges lose the out-of-bounds side.
pub fn boundary_mode(state: &SequenceState, pos: usize) -> BoundaryMode {
    let left = state.revealed_left(pos).is_some();
    let right = state.revealed_right(pos).is_some();
    match (left, right) {
        (true, true) => BoundaryMode::Both,
        (true, false) => BoundaryMode::LeftOnly,
        (false, true) => BoundaryMode::RightOnly,
        (false, false) => BoundaryMode::None,
    }
}

/// Audit record of one bias application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub left_active: bool,
    pub right_active: bool,
    /// Digest of the left mask when active, 0 otherwise. Replaying
    /// `green_mask(neighbor, key)` must reproduce it.
    pub left_mask_digest: u64,
    pub right_mask_digest: u64,
}

/// Full bias record kept in decode audit trails (adds the neighbor values
/// needed for conformance replay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub mode: BoundaryMode,
    pub left_ctx: Option<u32>,
    pub right_ctx: Option<u32>,
    pub left_mask_digest: u64,
    pub right_mask_digest: u64,
    pub delta: f64,
}

impl BiasRecord {
    pub fn inactive() -> Self {
        Self {
            mode: BoundaryMode::None,
            left_ctx: None,
            right_ctx: None,
            left_mask_digest: 0,
            right_mask_digest: 0,
            delta: 0.0,
        }
    }

    pub fn report(&self) -> BiasReport {
        BiasReport {
            left_active: self.left_ctx.is_some(),
            right_active: self.right_ctx.is_some(),
            left_mask_digest: self.left_mask_digest,
            right_mask_digest: self.right_mask_digest,
        }
    }
}

/// A revealed neighbor only constrains if it is a real, watermarkable token.
fn usable_ctx(tok: Option<u32>, vocab: &Vocabulary) -> Option<u32> {
    tok.filter(|&t| vocab.contains(t))
}

fn add_mask_bias(logits: &mut [f64], mask: &GreenMask, delta: f64) {
    for g in mask.iter_green() {
        logits[g as usize] += delta;
    }
}

pub(crate) fn apply_lr_bias(
    logits: &mut [f64],
    state: &SequenceState,
    pos: usize,
    cfg: &InjectorConfig,
    vocab: &Vocabulary,
    builder: &mut GreenMaskBuilder,
) -> Result<BiasRecord> {
    if pos >= state.len() {
        return Err(Error::Usage(format!(
            "position {pos} out of range for sequence of {}",
            state.len()
        )));
    }
    if state.is_revealed(pos) {
        return Err(Error::Usage(format!("position {pos} already revealed")));
    }
    if logits.len() != vocab.size() {
        return Err(Error::Usage(format!(
            "logit vector of {} entries for vocabulary of {}",
            logits.len(),
            vocab.size()
        )));
    }
    let left_ctx = usable_ctx(state.revealed_left(pos), vocab);
    let right_ctx = usable_ctx(state.revealed_right(pos), vocab);
    let mut left_digest = 0u64;
    let mut right_digest = 0u64;
    if let Some(a) = left_ctx {
        let mask = builder.build(a, cfg.key_left, vocab, cfg.gamma)?;
        left_digest = mask.digest();
        add_mask_bias(logits, &mask, cfg.delta);
    }
    if let Some(b) = right_ctx {
        let mask = builder.build(b, cfg.key_right, vocab, cfg.gamma)?;
        right_digest = mask.digest();
        add_mask_bias(logits, &mask, cfg.delta);
    }
    let mode = match (left_ctx.is_some(), right_ctx.is_some()) {
        (true, true) => BoundaryMode::Both,
        (true, false) => BoundaryMode::LeftOnly,
        (false, true) => BoundaryMode::RightOnly,
        (false, false) => BoundaryMode::None,
    };
    Ok(BiasRecord {
        mode,
        left_ctx,
        right_ctx,
        left_mask_digest: left_digest,
        right_mask_digest: right_digest,
        delta: cfg.delta,
    })
}

/// Adds `delta` per satisfied green constraint to each candidate logit:
/// `out[v] = logits[v] + delta*[v in G_L] + delta*[v in G_R]`, where the
/// left set comes from the revealed immediate left neighbor under the left
/// key (EMPTY if unavailable) and symmetrically for the right. The input is
/// not mutated.
pub fn inject(
    logits: &[f64],
    state: &SequenceState,
    pos: usize,
    cfg: &InjectorConfig,
    vocab: &Vocabulary,
) -> Result<(Vec<f64>, BiasReport)> {
    cfg.validate()?;
    let mut out = logits.to_vec();
    let mut builder = GreenMaskBuilder::new();
    let record = apply_lr_bias(&mut out, state, pos, cfg, vocab, &mut builder)?;
    Ok((out, record.report()))
}

/// Per-step bias hook used by `decode`. Implementations must be pure in the
/// decode-relevant sense: the bias may depend only on the revealed neighbor
/// values, the position, and the injector's own immutable configuration.
pub trait StepInjector {
    fn bias(
        &mut self,
        logits: &mut [f64],
        state: &SequenceState,
        pos: usize,
    ) -> Result<BiasRecord>;

    /// Accounted bytes this injector keeps alive beyond the unwatermarked
    /// baseline (mask buffers, scratch, cached tables).
    fn accounted_overhead_bytes(&self) -> u64;

    fn method_name(&self) -> &'static str;
}

/// The two-sided injector: one mask per revealed neighbor side, built
/// on demand. Holds only the Fisher-Yates scratch between calls, so its
/// memory overhead stays at two masks plus the permutation buffer.
#[derive(Debug, Clone)]
pub struct LrInjector {
    cfg: InjectorConfig,
    vocab: Vocabulary,
    builder: GreenMaskBuilder,
}

impl LrInjector {
    pub fn new(cfg: InjectorConfig, vocab: Vocabulary) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            vocab,
            builder: GreenMaskBuilder::new(),
        })
    }

    pub fn config(&self) -> &InjectorConfig {
        &self.cfg
    }
}

impl StepInjector for LrInjector {
    fn bias(
        &mut self,
        logits: &mut [f64],
        state: &SequenceState,
        pos: usize,
    ) -> Result<BiasRecord> {
        apply_lr_bias(logits, state, pos, &self.cfg, &self.vocab, &mut self.builder)
    }

    fn accounted_overhead_bytes(&self) -> u64 {
        // Two transient masks plus the persistent shuffle scratch.
        let mask_bytes = (self.vocab.size().div_ceil(64) * 8) as u64;
        2 * mask_bytes + self.builder.accounted_bytes() + std::mem::size_of::<Self>() as u64
    }

    fn method_name(&self) -> &'static str {
        "lr"
    }
}

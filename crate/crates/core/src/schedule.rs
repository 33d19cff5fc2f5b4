//! Denoising schedules: which masked positions get finalized at each step.
//!
//! Random-order and block schedules are fully realized up front as per-step
//! position sets; the confidence schedule is resolved during decoding (the
//! position with the highest current max-probability is revealed first), so
//! it only fixes the step count here. Whatever the kind, the realized
//! per-step sets partition the non-prompt positions: every position is
//! finalized exactly once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Mix64Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    RandomOrder,
    Confidence,
    Block,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random-order" => Ok(Self::RandomOrder),
            "confidence" => Ok(Self::Confidence),
            "block" => Ok(Self::Block),
            other => Err(Error::Usage(format!(
                "unknown schedule {other:?} (expected random|confidence|block)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    kind: ScheduleKind,
    len: usize,
    prompt_len: usize,
    steps: usize,
    block_len: Option<usize>,
    seed: u64,
    /// Realized per-step sets for random/block kinds; None for confidence.
    sets: Option<Vec<Vec<usize>>>,
}

/// Builds a schedule over positions `[prompt_len, len)`.
pub fn make_schedule(
    kind: ScheduleKind,
    len: usize,
    prompt_len: usize,
    steps: usize,
    block_len: Option<usize>,
    seed: u64,
) -> Result<Schedule> {
    if prompt_len >= len {
        return Err(Error::Config(format!(
            "prompt length {prompt_len} leaves nothing to generate in {len}"
        )));
    }
    let gen_len = len - prompt_len;
    if steps == 0 || steps > gen_len {
        return Err(Error::Config(format!(
            "steps {steps} must be in [1, {gen_len}]"
        )));
    }
    let sets = match kind {
        ScheduleKind::RandomOrder => {
            let mut order: Vec<usize> = (prompt_len..len).collect();
            let mut rng = Mix64Stream::new(derive_seed(seed, "schedule-random", 0));
            for i in 0..order.len().saturating_sub(1) {
                let j = i + rng.next_below((order.len() - i) as u64) as usize;
                order.swap(i, j);
            }
            Some(chunk_evenly(order, steps))
        }
        ScheduleKind::Block => {
            let bl = block_len.ok_or_else(|| {
                Error::Config("block schedule requires a block length".into())
            })?;
            if bl == 0 {
                return Err(Error::Config("block length must be positive".into()));
            }
            // Blocks are consumed left-to-right; within a block the reveal
            // order is a seeded shuffle (the refinement order), so the block
            // boundary is what carries the left-to-right structure.
            let mut order = Vec::with_capacity(gen_len);
            let mut start = prompt_len;
            let mut block_idx = 0u64;
            while start < len {
                let end = (start + bl).min(len);
                let mut block: Vec<usize> = (start..end).collect();
                let mut rng =
                    Mix64Stream::new(derive_seed(seed, "schedule-block", block_idx));
                for i in 0..block.len().saturating_sub(1) {
                    let j = i + rng.next_below((block.len() - i) as u64) as usize;
                    block.swap(i, j);
                }
                order.extend(block);
                start = end;
                block_idx += 1;
            }
            Some(chunk_evenly(order, steps))
        }
        ScheduleKind::Confidence => None,
    };
    Ok(Schedule {
        kind,
        len,
        prompt_len,
        steps,
        block_len,
        seed,
        sets,
    })
}

/// Splits `order` into `steps` contiguous chunks of near-equal size
/// (chunk `i` covers `[floor(i*n/steps), floor((i+1)*n/steps))`).
fn chunk_evenly(order: Vec<usize>, steps: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    (0..steps)
        .map(|i| order[i * n / steps..(i + 1) * n / steps].to_vec())
        .collect()
}

impl Schedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn block_len(&self) -> Option<usize> {
        self.block_len
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Pre-realized position set for a step, when the kind supports it.
    pub fn step_positions(&self, step: usize) -> Option<&[usize]> {
        self.sets.as_ref().map(|s| s[step].as_slice())
    }

    /// How many positions a confidence schedule should finalize at `step`,
    /// given the even-chunking rule shared with realized kinds.
    pub fn confidence_quota(&self, step: usize) -> usize {
        let n = self.len - self.prompt_len;
        (step + 1) * n / self.steps - step * n / self.steps
    }

    /// Verifies the partition property on a realized set list.
    pub fn check_partition(&self, sets: &[Vec<usize>]) -> Result<()> {
        let mut seen = vec![false; self.len];
        let mut count = 0usize;
        for set in sets {
            for &p in set {
                if p < self.prompt_len || p >= self.len || seen[p] {
                    return Err(Error::Data(format!(
                        "schedule position {p} repeated or out of range"
                    )));
                }
                seen[p] = true;
                count += 1;
            }
        }
        if count != self.len - self.prompt_len {
            return Err(Error::Data(format!(
                "schedule covers {count} of {} positions",
                self.len - self.prompt_len
            )));
        }
        Ok(())
    }
}

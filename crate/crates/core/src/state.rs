//! The partially denoised sequence a diffusion decode operates on.

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// A fixed-length token array mixing revealed tokens and MASK. Prompt
/// positions are revealed from the start and never re-sampled; generated
/// positions are revealed exactly once (monotone denoising).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceState {
    tokens: Vec<u32>,
    revealed: Vec<bool>,
    prompt_len: usize,
    mask_id: u32,
}

impl SequenceState {
    /// A state of `total_len` positions whose first `prompt.len()` positions
    /// are fixed to the prompt; the rest start fully masked.
    pub fn new(prompt: &[u32], total_len: usize, vocab: &Vocabulary) -> Result<Self> {
        if prompt.len() >= total_len {
            return Err(Error::Config(format!(
                "prompt of {} tokens leaves no room in a sequence of length {}",
                prompt.len(),
                total_len
            )));
        }
        for &t in prompt {
            vocab.check_token(t)?;
        }
        let mut tokens = vec![vocab.mask_id(); total_len];
        let mut revealed = vec![false; total_len];
        for (i, &t) in prompt.iter().enumerate() {
            tokens[i] = t;
            revealed[i] = true;
        }
        Ok(Self {
            tokens,
            revealed,
            prompt_len: prompt.len(),
            mask_id: vocab.mask_id(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn mask_id(&self) -> u32 {
        self.mask_id
    }

    #[inline]
    pub fn is_revealed(&self, pos: usize) -> bool {
        self.revealed[pos]
    }

    #[inline]
    pub fn token(&self, pos: usize) -> u32 {
        self.tokens[pos]
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// The generated continuation (everything after the prompt). Only
    /// meaningful once fully revealed.
    pub fn continuation(&self) -> &[u32] {
        &self.tokens[self.prompt_len..]
    }

    pub fn fully_revealed(&self) -> bool {
        self.revealed.iter().all(|&r| r)
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (self.prompt_len..self.tokens.len()).filter(|&i| !self.revealed[i])
    }

    /// Finalizes a position. Errors if the position is already revealed or
    /// inside the prompt: revealed tokens are never overwritten.
    pub fn reveal(&mut self, pos: usize, token: u32) -> Result<()> {
        if pos >= self.tokens.len() || pos < self.prompt_len || self.revealed[pos] {
            return Err(Error::Usage(format!(
                "cannot reveal position {pos} (len {}, prompt {}, revealed {})",
                self.tokens.len(),
                self.prompt_len,
                pos < self.tokens.len() && self.revealed[pos]
            )));
        }
        if token == self.mask_id {
            return Err(Error::Usage("cannot reveal the MASK sentinel".into()));
        }
        self.tokens[pos] = token;
        self.revealed[pos] = true;
        Ok(())
    }

    /// Nearest revealed neighbor strictly left of `pos`, at distance at most
    /// `max_dist`. Returns the token and its distance.
    pub fn nearest_revealed_left(&self, pos: usize, max_dist: usize) -> Option<(u32, usize)> {
        for d in 1..=max_dist.min(pos) {
            let p = pos - d;
            if self.revealed[p] {
                return Some((self.tokens[p], d));
            }
        }
        None
    }

    /// Nearest revealed neighbor strictly right of `pos`, at distance at
    /// most `max_dist`.
    pub fn nearest_revealed_right(&self, pos: usize, max_dist: usize) -> Option<(u32, usize)> {
        for d in 1..=max_dist.min(self.tokens.len().saturating_sub(pos + 1)) {
            let p = pos + d;
            if self.revealed[p] {
                return Some((self.tokens[p], d));
            }
        }
        None
    }

    /// Immediate left neighbor if it exists and is revealed.
    pub fn revealed_left(&self, pos: usize) -> Option<u32> {
        if pos > 0 && self.revealed[pos - 1] {
            Some(self.tokens[pos - 1])
        } else {
            None
        }
    }

    /// Immediate right neighbor if it exists and is revealed.
    pub fn revealed_right(&self, pos: usize) -> Option<u32> {
        if pos + 1 < self.tokens.len() && self.revealed[pos + 1] {
            Some(self.tokens[pos + 1])
        } else {
            None
        }
    }

    /// Checks the revealed/MASK consistency invariant.
    pub fn check_invariants(&self) -> Result<()> {
        for i in 0..self.tokens.len() {
            let masked = self.tokens[i] == self.mask_id;
            if i < self.prompt_len && !self.revealed[i] {
                return Err(Error::Data(format!("prompt position {i} not revealed")));
            }
            if self.revealed[i] == masked {
                return Err(Error::Data(format!(
                    "position {i}: revealed={} but token {} MASK",
                    self.revealed[i],
                    if masked { "is" } else { "is not" }
                )));
            }
        }
        Ok(())
    }
}

//! Non-adaptive token perturbations for robustness evaluation.
//!
//! Both attacks pick exactly `floor(p * L)` positions uniformly without
//! replacement, deterministically per seed. Deletion preserves the order of
//! the survivors; substitution replaces each hit with a uniform random token
//! different from the original.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Mix64Stream};
use crate::vocab::Vocabulary;

fn check_fraction(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "attack fraction must be in [0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Picks `count` distinct indices from `[0, len)` via a partial
/// Fisher-Yates, then returns them as a sorted membership map.
fn pick_positions(len: usize, count: usize, rng: &mut Mix64Stream) -> Vec<bool> {
    let mut pool: Vec<u32> = (0..len as u32).collect();
    let mut hit = vec![false; len];
    for i in 0..count {
        let j = i + rng.next_below((len - i) as u64) as usize;
        pool.swap(i, j);
        hit[pool[i] as usize] = true;
    }
    hit
}

/// Removes `floor(p * L)` uniformly chosen tokens, preserving order.
pub fn delete_tokens(tokens: &[u32], p: f64, seed: u64) -> Result<Vec<u32>> {
    check_fraction(p)?;
    let remove = (p * tokens.len() as f64).floor() as usize;
    if tokens.len() - remove < 3 {
        return Err(Error::Data(format!(
            "deleting {remove} of {} tokens leaves fewer than 3",
            tokens.len()
        )));
    }
    if remove == 0 {
        return Ok(tokens.to_vec());
    }
    let mut rng = Mix64Stream::new(derive_seed(seed, "attack-delete", 0));
    let hit = pick_positions(tokens.len(), remove, &mut rng);
    Ok(tokens
        .iter()
        .zip(&hit)
        .filter(|&(_, &h)| !h)
        .map(|(&t, _)| t)
        .collect())
}

/// Replaces `floor(p * L)` uniformly chosen tokens with uniform random
/// tokens different from the originals.
pub fn substitute_tokens(tokens: &[u32], p: f64, vocab: &Vocabulary, seed: u64) -> Result<Vec<u32>> {
    check_fraction(p)?;
    for &t in tokens {
        vocab.check_token(t)?;
    }
    let replace = (p * tokens.len() as f64).floor() as usize;
    let mut out = tokens.to_vec();
    if replace == 0 {
        return Ok(out);
    }
    let n = vocab.size() as u64;
    let mut rng = Mix64Stream::new(derive_seed(seed, "attack-substitute", 0));
    let hit = pick_positions(tokens.len(), replace, &mut rng);
    for (i, tok) in out.iter_mut().enumerate() {
        if hit[i] {
            // Uniform over the n-1 tokens != original.
            let r = rng.next_below(n - 1) as u32;
            *tok = r + u32::from(r >= *tok);
        }
    }
    Ok(out)
}

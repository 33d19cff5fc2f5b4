//! Bidirectional n-gram base model: the desk-scale stand-in for a diffusion
//! denoiser.
//!
//! At a masked position the model conditions on the nearest *revealed*
//! token on each side, whatever its distance, and backs off to the unigram
//! distribution only when a side has nothing revealed at all. Pair tables
//! exist for distances `1 ..= order - 1`; a nearest neighbor further away
//! is scored through the longest available table (the desk-scale stand-in
//! for decayed long-range influence). With smoothing constant `a`,
//! vocabulary size `n`, distance-`d` pair counts `c_d` (`d` clamped to
//! `order - 1`) and unigram counts `u`, the candidate weight is
//!
//! ```text
//! P_d(x -> y)  = (c_d[x][y] + a) / (rowsum_d[x] + a*n)
//! U(v)         = (u[v] + a) / (total + a*n)
//!
//! w(v) = [left  (t_l, d_l) present ? P_{d_l}(t_l -> v) : U(v)]
//!      * [right (t_r, d_r) present ? P_{d_r}(v -> t_r) : 1]
//! ```
//!
//! and the returned distribution is `w` normalized to sum to one. For a
//! first-order Markov source with adjacent revealed neighbors this is the
//! exact conditional of the hidden token, which is what makes the
//! count-based test oracles exact.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::SequenceState;
use crate::vocab::Vocabulary;

const MODEL_FORMAT: &str = "lrdwm-model";
const MODEL_VERSION: u32 = 1;

/// Pair-count tables for one neighbor distance.
#[derive(Debug, Clone)]
struct DistTables {
    /// rows[a] = sorted (b, count): occurrences of token b at distance +d
    /// after token a.
    rows: Vec<Vec<(u32, u64)>>,
    /// cols[b] = sorted (a, count): predecessors of b at distance d.
    cols: Vec<Vec<(u32, u64)>>,
    /// 1 / (rowsum[a] + alpha*n), precomputed.
    inv_row_denom: Vec<f64>,
    /// alpha * inv_row_denom[v]: the right-side factor for unseen pairs.
    default_right: Vec<f64>,
}

impl DistTables {
    fn from_pairs(pairs: &HashMap<(u32, u32), u64>, n: usize, alpha: f64) -> Self {
        let mut rows: Vec<Vec<(u32, u64)>> = vec![Vec::new(); n];
        let mut cols: Vec<Vec<(u32, u64)>> = vec![Vec::new(); n];
        let mut row_sums = vec![0u64; n];
        for (&(a, b), &c) in pairs {
            rows[a as usize].push((b, c));
            cols[b as usize].push((a, c));
            row_sums[a as usize] += c;
        }
        for r in &mut rows {
            r.sort_unstable();
        }
        for c in &mut cols {
            c.sort_unstable();
        }
        let inv_row_denom: Vec<f64> = row_sums
            .iter()
            .map(|&s| 1.0 / (s as f64 + alpha * n as f64))
            .collect();
        let default_right: Vec<f64> = inv_row_denom.iter().map(|&x| alpha * x).collect();
        Self {
            rows,
            cols,
            inv_row_denom,
            default_right,
        }
    }

    fn entries(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct BaseModel {
    vocab: Vocabulary,
    order: usize,
    smoothing: f64,
    total_tokens: u64,
    unigram_counts: Vec<u64>,
    /// Smoothed unigram probabilities (sum to 1).
    unigram: Vec<f64>,
    /// dist[d-1] holds the distance-d tables, d in 1..order.
    dist: Vec<DistTables>,
}

/// Trains the base model from token-id sequences.
pub fn train_base_model(
    corpus: &[Vec<u32>],
    order: usize,
    smoothing: f64,
    vocab: &Vocabulary,
) -> Result<BaseModel> {
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::Data("cannot train on an empty corpus".into()));
    }
    if !(order == 2 || order == 3) {
        return Err(Error::Config(format!("order must be 2 or 3, got {order}")));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!(
            "smoothing must be a positive finite real, got {smoothing}"
        )));
    }
    let n = vocab.size();
    let mut unigram_counts = vec![0u64; n];
    let mut pair_maps: Vec<HashMap<(u32, u32), u64>> = vec![HashMap::new(); order - 1];
    for seq in corpus {
        for &t in seq {
            vocab.check_token(t)?;
            unigram_counts[t as usize] += 1;
        }
        for (di, map) in pair_maps.iter_mut().enumerate() {
            let d = di + 1;
            for i in 0..seq.len().saturating_sub(d) {
                *map.entry((seq[i], seq[i + d])).or_insert(0) += 1;
            }
        }
    }
    Ok(BaseModel::from_counts(
        vocab.clone(),
        order,
        smoothing,
        unigram_counts,
        &pair_maps,
    ))
}

impl BaseModel {
    fn from_counts(
        vocab: Vocabulary,
        order: usize,
        smoothing: f64,
        unigram_counts: Vec<u64>,
        pair_maps: &[HashMap<(u32, u32), u64>],
    ) -> Self {
        let n = vocab.size();
        let total_tokens: u64 = unigram_counts.iter().sum();
        let denom = total_tokens as f64 + smoothing * n as f64;
        let unigram: Vec<f64> = unigram_counts
            .iter()
            .map(|&c| (c as f64 + smoothing) / denom)
            .collect();
        let dist = pair_maps
            .iter()
            .map(|m| DistTables::from_pairs(m, n, smoothing))
            .collect();
        Self {
            vocab,
            order,
            smoothing,
            total_tokens,
            unigram_counts,
            unigram,
            dist,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Longest distance with its own pair table; nearest neighbors further
    /// away are scored through this table.
    pub fn max_dist(&self) -> usize {
        self.order - 1
    }

    /// Raw pair count at distance `d` (1-based).
    pub fn pair_count(&self, d: usize, a: u32, b: u32) -> u64 {
        let t = &self.dist[d - 1];
        t.rows[a as usize]
            .binary_search_by_key(&b, |&(tok, _)| tok)
            .map(|i| t.rows[a as usize][i].1)
            .unwrap_or(0)
    }

    pub fn unigram_count(&self, v: u32) -> u64 {
        self.unigram_counts[v as usize]
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Fills `out` with the normalized conditional distribution given the
    /// resolved contexts, and returns the max probability.
    pub(crate) fn probs_into(
        &self,
        left: Option<(u32, usize)>,
        right: Option<(u32, usize)>,
        out: &mut Vec<f64>,
    ) -> f64 {
        let n = self.vocab.size();
        out.clear();
        match left {
            Some((a, dl)) => {
                let t = &self.dist[dl.min(self.max_dist()) - 1];
                let inv = t.inv_row_denom[a as usize];
                let default = self.smoothing * inv;
                out.resize(n, default);
                for &(b, c) in &t.rows[a as usize] {
                    out[b as usize] = (c as f64 + self.smoothing) * inv;
                }
            }
            None => out.extend_from_slice(&self.unigram),
        }
        if let Some((b, dr)) = right {
            let t = &self.dist[dr.min(self.max_dist()) - 1];
            for (w, &f) in out.iter_mut().zip(&t.default_right) {
                *w *= f;
            }
            // Seen pairs: the default factor alpha*inv becomes
            // (c + alpha)*inv, a multiplicative patch of (c + alpha)/alpha.
            for &(a, c) in &t.cols[b as usize] {
                out[a as usize] *= (c as f64 + self.smoothing) / self.smoothing;
            }
        }
        let sum: f64 = out.iter().sum();
        let inv_sum = 1.0 / sum;
        let mut max = 0.0f64;
        for w in out.iter_mut() {
            *w *= inv_sum;
            if *w > max {
                max = *w;
            }
        }
        max
    }

    fn resolve_contexts(
        &self,
        state: &SequenceState,
        pos: usize,
    ) -> (Option<(u32, usize)>, Option<(u32, usize)>) {
        (
            state.nearest_revealed_left(pos, usize::MAX),
            state.nearest_revealed_right(pos, usize::MAX),
        )
    }

    fn check_queryable(&self, state: &SequenceState, pos: usize) -> Result<()> {
        if pos >= state.len() || pos < state.prompt_len() || state.is_revealed(pos) {
            return Err(Error::Usage(format!(
                "position {pos} is revealed, in the prompt, or out of range"
            )));
        }
        Ok(())
    }

    /// Normalized probabilities over the vocabulary for a masked position.
    pub fn base_probs(&self, state: &SequenceState, pos: usize) -> Result<Vec<f64>> {
        self.check_queryable(state, pos)?;
        let (l, r) = self.resolve_contexts(state, pos);
        let mut out = Vec::new();
        self.probs_into(l, r, &mut out);
        Ok(out)
    }

    /// Log-probabilities (logits) over the vocabulary for a masked position.
    pub fn base_logits(&self, state: &SequenceState, pos: usize) -> Result<Vec<f64>> {
        let mut probs = self.base_probs(state, pos)?;
        for p in &mut probs {
            *p = p.ln();
        }
        Ok(probs)
    }

    /// Log-probability of `seq[pos]` given its in-window neighbors in a
    /// fully revealed sequence. Used by the perplexity oracle.
    pub fn token_logprob(&self, seq: &[u32], pos: usize) -> Result<f64> {
        if pos >= seq.len() {
            return Err(Error::Usage(format!(
                "position {pos} out of range for sequence of {}",
                seq.len()
            )));
        }
        for &t in seq {
            self.vocab.check_token(t)?;
        }
        // In a fully revealed sequence the nearest neighbor sits at distance 1.
        let left = (pos > 0).then(|| (seq[pos - 1], 1));
        let right = (pos + 1 < seq.len()).then(|| (seq[pos + 1], 1));
        let mut out = Vec::new();
        self.probs_into(left, right, &mut out);
        Ok(out[seq[pos] as usize].ln())
    }

    /// Pseudo-perplexity of a sequence under this model: `exp` of the mean
    /// negative log-probability of each token given its neighbors, skipping
    /// the first `skip_prefix` positions (the prompt).
    pub fn sequence_ppl(&self, seq: &[u32], skip_prefix: usize) -> Result<f64> {
        if seq.len() <= skip_prefix {
            return Err(Error::Data(format!(
                "sequence of {} tokens has nothing after prefix {skip_prefix}",
                seq.len()
            )));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for pos in skip_prefix..seq.len() {
            total += self.token_logprob(seq, pos)?;
            count += 1;
        }
        Ok((-total / count as f64).exp())
    }

    /// Accounted size of the model tables in bytes.
    pub fn accounted_bytes(&self) -> u64 {
        let n = self.vocab.size();
        let mut bytes = (n * 8) as u64 * 2; // unigram counts + probs
        for t in &self.dist {
            bytes += (t.entries() * 12 * 2) as u64; // rows + cols (tok, count)
            bytes += (n * 8) as u64 * 3; // row_sums, inv_row_denom, default_right
        }
        bytes + std::mem::size_of::<Self>() as u64
    }

    pub fn to_json(&self) -> serde_json::Value {
        let pairs: Vec<Vec<(u32, u32, u64)>> = self
            .dist
            .iter()
            .map(|t| {
                t.rows
                    .iter()
                    .enumerate()
                    .flat_map(|(a, row)| row.iter().map(move |&(b, c)| (a as u32, b, c)))
                    .collect()
            })
            .collect();
        serde_json::json!(ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            vocab_size: self.vocab.size(),
            mask_id: self.vocab.mask_id(),
            order: self.order,
            smoothing: self.smoothing,
            unigram: self.unigram_counts.clone(),
            pairs,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let file: ModelFile = serde_json::from_value(value.clone())?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Data(format!(
                "not a model file (format {:?})",
                file.format
            )));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Data(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let vocab = Vocabulary::with_mask_id(file.vocab_size, file.mask_id)?;
        if file.unigram.len() != file.vocab_size {
            return Err(Error::Data("unigram table size mismatch".into()));
        }
        if !(file.order == 2 || file.order == 3) || file.pairs.len() != file.order - 1 {
            return Err(Error::Data("inconsistent order / pair tables".into()));
        }
        let mut pair_maps: Vec<HashMap<(u32, u32), u64>> = vec![HashMap::new(); file.order - 1];
        for (map, triples) in pair_maps.iter_mut().zip(&file.pairs) {
            for &(a, b, c) in triples {
                if a as usize >= file.vocab_size || b as usize >= file.vocab_size {
                    return Err(Error::Data("pair token out of range".into()));
                }
                map.insert((a, b), c);
            }
        }
        Ok(Self::from_counts(
            vocab,
            file.order,
            file.smoothing,
            file.unigram,
            &pair_maps,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), &self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let value: serde_json::Value = serde_json::from_reader(std::io::BufReader::new(f))?;
        Self::from_json(&value)
    }
}

/// The logit of a token id in a model output, treating the MASK sentinel as
/// unreachable (-inf).
pub fn logit_of(logits: &[f64], vocab: &Vocabulary, token: u32) -> f64 {
    if token == vocab.mask_id() {
        f64::NEG_INFINITY
    } else {
        logits[token as usize]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    vocab_size: usize,
    mask_id: u32,
    order: usize,
    smoothing: f64,
    unigram: Vec<u64>,
    pairs: Vec<Vec<(u32, u32, u64)>>,
}

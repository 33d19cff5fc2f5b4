//! Synthetic token corpora.
//!
//! The generator is a seeded first-order Markov chain over a configurable
//! vocabulary: each state gets a small set of successors with geometrically
//! decaying weights. `dominance` close to 1 gives near-uniform branching
//! (high entropy); close to 0 gives near-deterministic chains. Corpus files
//! are one sequence per line, whitespace-separated decimal token ids.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Mix64Stream};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusParams {
    pub vocab_size: usize,
    pub sequences: usize,
    pub seq_len: usize,
    /// Successors per state.
    pub branching: usize,
    /// Weight ratio between consecutive successors, in (0, 1]. Lower values
    /// concentrate mass on the top successor.
    pub dominance: f64,
    pub seed: u64,
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::VocabTooSmall {
                size: self.vocab_size,
            });
        }
        if self.sequences == 0 || self.seq_len == 0 {
            return Err(Error::Config(
                "corpus needs at least one sequence and a positive length".into(),
            ));
        }
        if self.branching == 0 || self.branching > self.vocab_size {
            return Err(Error::Config(format!(
                "branching {} must be in [1, |V|={}]",
                self.branching, self.vocab_size
            )));
        }
        if !(self.dominance > 0.0 && self.dominance <= 1.0) {
            return Err(Error::Config(format!(
                "dominance {} must be in (0, 1]",
                self.dominance
            )));
        }
        Ok(())
    }
}

/// A realized Markov chain: per-state successor lists with a cumulative
/// weight table for O(branching) sampling.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    vocab_size: usize,
    /// Per state: (successor, cumulative weight), cumulative weights end at 1.
    succ: Vec<Vec<(u32, f64)>>,
}

impl MarkovChain {
    pub fn build(params: &CorpusParams) -> Result<Self> {
        params.validate()?;
        let n = params.vocab_size;
        let k = params.branching;
        let mut succ = Vec::with_capacity(n);
        for state in 0..n as u32 {
            let mut rng = Mix64Stream::new(derive_seed(params.seed, "chain-state", state.into()));
            // Top successor is the cycle backbone (t + 1 mod n); the rest
            // are k-1 distinct random detours. The backbone keeps greedy
            // trajectories on a vocabulary-length orbit instead of letting
            // them collapse into short attractor loops, so unwatermarked
            // text exercises O(|V|) distinct adjacent pairs.
            let backbone = (state + 1) % n as u32;
            let mut chosen = Vec::with_capacity(k);
            chosen.push(backbone);
            let mut pool: Vec<u32> = (0..n as u32).filter(|&t| t != backbone).collect();
            for i in 0..k - 1 {
                let j = i + rng.next_below((pool.len() - i) as u64) as usize;
                pool.swap(i, j);
                chosen.push(pool[i]);
            }
            // Geometric weights w_j = dominance^j, normalized, cumulative.
            let mut weights: Vec<f64> = (0..k).map(|j| params.dominance.powi(j as i32)).collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            for w in &mut weights {
                acc += *w / total;
                *w = acc;
            }
            weights[k - 1] = 1.0;
            succ.push(chosen.into_iter().zip(weights).collect());
        }
        Ok(Self {
            vocab_size: n,
            succ,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn step(&self, state: u32, rng: &mut Mix64Stream) -> u32 {
        let row = &self.succ[state as usize];
        let u = rng.next_f64();
        for &(tok, cum) in row {
            if u < cum {
                return tok;
            }
        }
        row[row.len() - 1].0
    }

    /// Samples one sequence of `len` tokens starting from a uniform state.
    pub fn sample_sequence(&self, len: usize, seed: u64) -> Vec<u32> {
        let mut rng = Mix64Stream::new(seed);
        let mut out = Vec::with_capacity(len);
        let mut state = rng.next_below(self.vocab_size as u64) as u32;
        out.push(state);
        for _ in 1..len {
            state = self.step(state, &mut rng);
            out.push(state);
        }
        out
    }

    /// Samples a whole corpus; sequence i uses the derived seed
    /// `(seed, "corpus-seq", i)`.
    pub fn sample_corpus(&self, sequences: usize, seq_len: usize, seed: u64) -> Vec<Vec<u32>> {
        (0..sequences)
            .map(|i| self.sample_sequence(seq_len, derive_seed(seed, "corpus-seq", i as u64)))
            .collect()
    }
}

/// Generates a corpus directly from parameters (chain + samples in one call).
pub fn generate_corpus(params: &CorpusParams) -> Result<Vec<Vec<u32>>> {
    let chain = MarkovChain::build(params)?;
    Ok(chain.sample_corpus(params.sequences, params.seq_len, derive_seed(params.seed, "corpus", 0)))
}

/// Writes sequences as decimal token ids, one sequence per line.
pub fn write_corpus<W: Write>(mut w: W, sequences: &[Vec<u32>]) -> Result<()> {
    for seq in sequences {
        let mut line = String::with_capacity(seq.len() * 4);
        for (i, t) in seq.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&t.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn write_corpus_file(path: &Path, sequences: &[Vec<u32>]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_corpus(std::io::BufWriter::new(f), sequences)
}

/// Reads a token-id corpus; blank lines are skipped.
pub fn read_corpus<R: std::io::Read>(r: R) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: std::result::Result<Vec<u32>, _> =
            line.split_whitespace().map(str::parse::<u32>).collect();
        match seq {
            Ok(seq) => out.push(seq),
            Err(e) => {
                return Err(Error::Data(format!(
                    "line {}: bad token id ({e})",
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<Vec<u32>>> {
    read_corpus(std::fs::File::open(path)?)
}

/// Validates that every token of every sequence is a real token of `vocab`.
pub fn check_corpus(sequences: &[Vec<u32>], vocab: &Vocabulary) -> Result<()> {
    for seq in sequences {
        for &t in seq {
            vocab.check_token(t)?;
        }
    }
    Ok(())
}

//! Two-sided, order-agnostic green-list watermarking for diffusion-style
//! text generation, at desk scale.
//!
//! The crate bundles:
//!
//! - [`vocab`]: keyed, exactly balanced green/red vocabulary partitions;
//! - [`corpus`] + [`model`]: a seeded Markov corpus generator and a
//!   bidirectional n-gram base model standing in for a diffusion denoiser;
//! - [`schedule`] + [`decode`]: iterative unmasking with random-order,
//!   confidence, and block schedules;
//! - [`inject`]: the two-sided logit bias (one keyed green set per revealed
//!   neighbor, `delta` added per satisfied side);
//! - [`detector`]: ternary per-token scores, the standardized Z statistic,
//!   and empirical null calibration of variance and thresholds;
//! - [`baselines`]: a left-only AR-style watermark and an inverse-table
//!   scheme with explicit |V|^2 memory accounting;
//! - [`attacks`]: deletion and substitution perturbations;
//! - [`bench`]: a seeded experiment harness emitting CSV/JSONL reports for
//!   detectability, quality, efficiency, and robustness.
//!
//! Determinism is a contract throughout: masks, schedules, corpora, and
//! experiment grids are bit-reproducible from their seeds (see
//! `docs/mask-construction.md` for the frozen hash construction).

pub mod attacks;
pub mod baselines;
pub mod bench;
pub mod corpus;
pub mod decode;
pub mod detector;
pub mod error;
pub mod inject;
pub mod model;
pub mod rng;
pub mod schedule;
pub mod state;
pub mod vocab;

pub use error::{Error, ErrorKind, Result};

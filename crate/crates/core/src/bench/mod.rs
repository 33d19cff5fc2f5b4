//! Benchmark harness: seeded experiment grids over methods, bias strengths,
//! schedules, and attacks, emitting plot-ready CSV and JSONL reports.

pub mod config;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use report::{ReportRow, TradeoffRow};
pub use runner::{
    passes_filter, run_all, run_detectability, run_efficiency, run_quality, run_robustness,
    BenchContext, MethodDetector,
};

use crate::error::{Error, Result};

/// Watermarking method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Two-sided left/right watermark.
    Lr,
    /// AR-style left-only green list.
    Left,
    /// Inverse-table right-neighbor scheme.
    Dmark,
    /// Unwatermarked baseline.
    NoWm,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(Self::Lr),
            "left" => Ok(Self::Left),
            "dmark" => Ok(Self::Dmark),
            "none" => Ok(Self::NoWm),
            other => Err(Error::Usage(format!(
                "unknown method {other:?} (expected lr|left|dmark|none)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Lr => "lr",
            Self::Left => "left",
            Self::Dmark => "dmark",
            Self::NoWm => "none",
        }
    }
}

//! Flat machine-readable result rows and the CSV/JSONL emitters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    /// Which evaluation produced the row: detectability | quality |
    /// efficiency | robustness.
    pub run: String,
    pub method: String,
    pub delta: f64,
    /// Sequences behind the row, after filtering.
    pub n: usize,
    pub target_fpr: Option<f64>,
    pub tpr_at_fpr: Option<f64>,
    pub mean_z: Option<f64>,
    /// Empirical FPR of this row's detector on the held-out null set.
    pub null_fpr_measured: Option<f64>,
    /// Null sanity: measured FPR within [0.5x, 2x] of target (only
    /// evaluated when the null set has >= 2000 sequences).
    pub null_fpr_ok: Option<bool>,
    pub mean_ppl: Option<f64>,
    pub ppl_sem: Option<f64>,
    /// Median wall-clock per generated sequence.
    pub gen_time_ms: Option<f64>,
    /// Accounted peak memory (model tables + method overhead), not RSS.
    pub peak_mem_bytes: Option<u64>,
    pub attack_kind: Option<String>,
    pub attack_p: Option<f64>,
    pub z_drop: Option<f64>,
    pub config_digest: String,
    pub seed: u64,
}

impl ReportRow {
    pub fn new(run: &str, method: &str, delta: f64, n: usize, digest: &str, seed: u64) -> Self {
        Self {
            run: run.to_string(),
            method: method.to_string(),
            delta,
            n,
            target_fpr: None,
            tpr_at_fpr: None,
            mean_z: None,
            null_fpr_measured: None,
            null_fpr_ok: None,
            mean_ppl: None,
            ppl_sem: None,
            gen_time_ms: None,
            peak_mem_bytes: None,
            attack_kind: None,
            attack_p: None,
            z_drop: None,
            config_digest: digest.to_string(),
            seed,
        }
    }
}

/// One line of the quality-detectability tradeoff output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub method: String,
    pub delta: f64,
    pub tpr_at_fpr: f64,
    pub target_fpr: f64,
    pub mean_ppl: f64,
    pub ppl_sem: f64,
    /// Set when this delta is the smallest reaching one of the configured
    /// detection-rate anchors (the operating-point summary).
    pub operating_tpr: Option<f64>,
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows_jsonl(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_tradeoff_csv(path: &Path, rows: &[TradeoffRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

impl From<csv::Error> for crate::error::Error {
    fn from(e: csv::Error) -> Self {
        crate::error::Error::Data(format!("csv: {e}"))
    }
}

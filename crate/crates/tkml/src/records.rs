//! JSON-lines result files shared by the attack runner and the report
//! aggregator: one header record describing the run, then one record per
//! attacked instance.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const RESULTS_SCHEMA: &str = "tkml-results-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub schema: String,
    pub attack: String,
    pub k: usize,
    pub strategy: Option<String>,
    pub epsilon: Option<f64>,
    pub eta: f64,
    pub max_iter: usize,
    pub beta: f64,
    pub seed: u64,
    pub k_prime: Vec<usize>,
    pub input_dim: usize,
    /// Universal runs only: the shared perturbation and its training stats.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub universal: Option<UniversalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalSummary {
    pub z: Vec<f64>,
    pub l2_norm: f64,
    pub training_uasr: f64,
    pub epochs_used: usize,
    pub hit_epoch_cap: bool,
}

/// Per-instance outcome. `success_at` maps each evaluated cutoff k' to
/// whether the attack also succeeds at that cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub id: usize,
    pub success: bool,
    pub l2_norm: f64,
    pub iterations: usize,
    pub final_topk: Vec<usize>,
    pub success_at: BTreeMap<usize, bool>,
}

pub fn write_results(
    path: &Path,
    header: &ResultsHeader,
    records: &[ResultRecord],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Append records to an existing results file (resumable runs).
pub fn append_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let file = std::fs::OpenOptions::new().append(true).open(path)?;
    let mut w = std::io::BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<(ResultsHeader, Vec<ResultRecord>)> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty results file".into(),
    })?;
    let header: ResultsHeader =
        serde_json::from_str(&header_line?).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad results header: {e}"),
        })?;
    if header.schema != RESULTS_SCHEMA {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "schema mismatch: expected {RESULTS_SCHEMA}, found {}",
                header.schema
            ),
        });
    }

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResultRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok((header, records))
}

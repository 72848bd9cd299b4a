//! Training telemetry: one JSON object per line, schema fixed by
//! [`MetricRecord`]. Every field is always present; values that do not apply
//! to the current method or phase are explicit nulls. Map keys are sorted,
//! so identical runs produce byte-identical files.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    /// "joint" during mask optimization, "continue" afterwards.
    pub phase: String,
    pub epoch: u64,
    pub step: u64,
    /// Task loss (the penalty term is reported through `lambda` telemetry).
    pub loss: f64,
    pub global_sparsity: Option<f64>,
    pub per_layer_sparsity: Option<BTreeMap<String, f64>>,
    pub mask_sparsity_diff: Option<f64>,
    pub mask_hamming_delta: Option<u64>,
    pub per_layer_grad_l2: Option<BTreeMap<String, f64>>,
    pub lr_theta: f64,
    pub lr_phi: Option<f64>,
    pub lambda: Option<f64>,
}

/// Append-only JSONL writer; records stay in memory as well so callers can
/// inspect the stream after the run.
pub struct MetricsSink {
    writer: Option<BufWriter<std::fs::File>>,
    pub records: Vec<MetricRecord>,
}

impl MetricsSink {
    pub fn in_memory() -> Self {
        MetricsSink {
            writer: None,
            records: Vec::new(),
        }
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path)?;
        Ok(MetricsSink {
            writer: Some(BufWriter::new(file)),
            records: Vec::new(),
        })
    }

    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            let line = serde_json::to_string(&record)
                .map_err(|e| LabError::Metrics {
                    line: self.records.len() + 1,
                    msg: e.to_string(),
                })?;
            writeln!(w, "{line}")?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.flush()?;
        }
        Ok(())
    }
}

/// Parse a metrics.jsonl file; parse failures report the 1-based line number.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricRecord = serde_json::from_str(line).map_err(|e| LabError::Metrics {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

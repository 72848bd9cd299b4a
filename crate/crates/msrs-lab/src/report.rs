//! Post-hoc reports over a run directory: per-step gradient norms, the
//! per-module sparsity table, and a one-page summary. Plain CSV and
//! key=value text; plotting is left to external tools.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LabError, Result};
use crate::mask::BinaryMask;
use crate::metrics::{read_metrics, MetricRecord};
use crate::model::Model;

/// Per-layer, per-block and global sparsity of a model under its masks.
/// Only prunable parameters are counted; block and global values are
/// parameter-count weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    /// (layer name, sparsity, parameter count)
    pub layers: Vec<(String, f64, usize)>,
    /// (block name, average sparsity)
    pub blocks: Vec<(String, f64)>,
    pub global: f64,
}

pub fn sparsity_report(model: &Model, masks: Option<&[BinaryMask]>) -> Result<SparsityReport> {
    let prunable = model.prunable_indices();
    if let Some(m) = masks {
        if m.len() != prunable.len() {
            return Err(LabError::shape(
                "sparsity_report",
                format!("{} masks for {} prunable layers", m.len(), prunable.len()),
            ));
        }
    }
    let mut layers = Vec::new();
    for (k, &slot) in prunable.iter().enumerate() {
        let p = &model.params[slot];
        let s = masks.map_or(0.0, |m| m[k].sparsity());
        layers.push((p.name.clone(), s, p.value.len()));
    }
    Ok(aggregate_sparsity(layers))
}

fn block_of(layer: &str) -> String {
    match layer.split_once('.') {
        Some((head, _)) => head.to_string(),
        None => layer.to_string(),
    }
}

fn aggregate_sparsity(layers: Vec<(String, f64, usize)>) -> SparsityReport {
    let mut by_block: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut zero_weighted = 0.0;
    let mut total = 0usize;
    for (name, s, count) in &layers {
        let e = by_block.entry(block_of(name)).or_insert((0.0, 0));
        e.0 += s * *count as f64;
        e.1 += *count;
        zero_weighted += s * *count as f64;
        total += *count;
    }
    let blocks = by_block
        .into_iter()
        .map(|(b, (z, c))| (b, z / c as f64))
        .collect();
    SparsityReport {
        layers,
        blocks,
        global: if total == 0 {
            0.0
        } else {
            zero_weighted / total as f64
        },
    }
}

/// Files produced by a run report.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub gradnorms_csv: String,
    pub sparsity_csv: String,
    pub summary_txt: String,
}

/// Assemble the report from a run's metric records plus the epsilon /
/// epoch-cap settings (recovered from the resolved config snapshot).
pub fn build_run_report(
    records: &[MetricRecord],
    epsilon: Option<f64>,
    max_joint_epochs: Option<usize>,
) -> Result<RunReport> {
    if records.is_empty() {
        return Err(LabError::Metrics {
            line: 1,
            msg: "no metric records".into(),
        });
    }

    // Gradient-norm table over the logged steps.
    let mut layer_names: Vec<String> = Vec::new();
    for r in records {
        if let Some(map) = &r.per_layer_grad_l2 {
            for k in map.keys() {
                if !layer_names.contains(k) {
                    layer_names.push(k.clone());
                }
            }
        }
    }
    layer_names.sort();
    let mut gradnorms = String::from("step");
    for n in &layer_names {
        let _ = write!(gradnorms, ",{n}");
    }
    gradnorms.push('\n');
    for r in records {
        if let Some(map) = &r.per_layer_grad_l2 {
            let _ = write!(gradnorms, "{}", r.step);
            for n in &layer_names {
                match map.get(n) {
                    Some(v) => {
                        let _ = write!(gradnorms, ",{v}");
                    }
                    None => gradnorms.push_str(",nan"),
                }
            }
            gradnorms.push('\n');
        }
    }

    // Sparsity-by-module table from the last record carrying layer data.
    let last_sparsity = records
        .iter()
        .rev()
        .find(|r| r.per_layer_sparsity.is_some())
        .and_then(|r| r.per_layer_sparsity.clone())
        .unwrap_or_default();
    let layers: Vec<(String, f64, usize)> = last_sparsity
        .iter()
        .map(|(k, &v)| (k.clone(), v, 1))
        .collect();
    // Without parameter counts in the metric stream the block average is the
    // plain mean over the block's layers.
    let agg = aggregate_sparsity(layers);
    let mut sparsity_csv = String::from("scope,name,sparsity\n");
    for (name, s, _) in &agg.layers {
        let _ = writeln!(sparsity_csv, "layer,{name},{s}");
    }
    for (name, s) in &agg.blocks {
        let _ = writeln!(sparsity_csv, "block,{name},{s}");
    }
    let last_global = records
        .iter()
        .rev()
        .find_map(|r| r.global_sparsity)
        .unwrap_or(0.0);
    let _ = writeln!(sparsity_csv, "global,all,{last_global}");

    // Summary.
    let joint_records: Vec<&MetricRecord> =
        records.iter().filter(|r| r.phase == "joint").collect();
    let epochs_joint = joint_records.iter().map(|r| r.epoch).max().unwrap_or(0);
    let stop_reason = if joint_records.is_empty() {
        "n/a".to_string()
    } else {
        let last_diff = joint_records
            .iter()
            .rev()
            .find_map(|r| r.mask_sparsity_diff);
        match (last_diff, epsilon, max_joint_epochs) {
            (Some(d), Some(eps), _) if d < eps => "epsilon".to_string(),
            (_, _, Some(cap)) if epochs_joint as usize >= cap => "max_epochs".to_string(),
            (Some(d), Some(eps), None) if d >= eps => "max_epochs".to_string(),
            _ => "epsilon".to_string(),
        }
    };
    let final_record = records.last().expect("nonempty");
    let mut summary = String::new();
    let _ = writeln!(summary, "run_id={}", final_record.run_id);
    let _ = writeln!(summary, "j={epochs_joint}");
    let _ = writeln!(summary, "final_sparsity={last_global}");
    let _ = writeln!(summary, "final_loss={}", final_record.loss);
    let _ = writeln!(summary, "stop_reason={stop_reason}");

    Ok(RunReport {
        gradnorms_csv: gradnorms,
        sparsity_csv,
        summary_txt: summary,
    })
}

/// Read a run directory (metrics.jsonl + optional resolved-config.snapshot)
/// and write the three report files next to them.
pub fn report_run_dir(dir: &Path) -> Result<()> {
    let metrics_path = dir.join("metrics.jsonl");
    if !metrics_path.exists() {
        return Err(LabError::Metrics {
            line: 0,
            msg: format!("no metrics.jsonl in {}", dir.display()),
        });
    }
    let records = read_metrics(&metrics_path)?;

    let mut epsilon = None;
    let mut max_joint = None;
    let snapshot = dir.join("resolved-config.snapshot");
    if let Ok(text) = std::fs::read_to_string(&snapshot) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                match k.trim() {
                    "msrs.epsilon" => epsilon = v.trim().parse().ok(),
                    "msrs.max_joint_epochs" => max_joint = v.trim().parse().ok(),
                    _ => {}
                }
            }
        }
    }

    let report = build_run_report(&records, epsilon, max_joint)?;
    std::fs::write(dir.join("gradnorms.csv"), report.gradnorms_csv)?;
    std::fs::write(dir.join("sparsity_by_module.csv"), report.sparsity_csv)?;
    std::fs::write(dir.join("summary.txt"), report.summary_txt)?;
    Ok(())
}

/// Report over a sweep directory: per-cell run reports plus the sweep table
/// copied into the summary.
pub fn report_sweep_dir(dir: &Path) -> Result<()> {
    let sweep_csv = dir.join("sweep.csv");
    if !sweep_csv.exists() {
        return Err(LabError::Metrics {
            line: 0,
            msg: format!("no sweep.csv in {}", dir.display()),
        });
    }
    let mut cells = 0;
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() && path.join("metrics.jsonl").exists() {
            report_run_dir(&path)?;
            cells += 1;
        }
    }
    let table = std::fs::read_to_string(&sweep_csv)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "cells={cells}");
    summary.push_str(&table);
    std::fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}

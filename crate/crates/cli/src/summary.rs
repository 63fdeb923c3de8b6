//! Mean and standard deviation tables over result lines.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

pub const METRICS: [&str; 3] = ["accuracy", "macro_f1", "auc"];

#[derive(Debug, Deserialize)]
struct MetricsView {
    accuracy: f64,
    macro_f1: f64,
    auc: f64,
}

/// The fields of a result line the summaries need; anything else is
/// ignored.
#[derive(Debug, Deserialize)]
struct LineView {
    status: String,
    method: String,
    axis_value: Option<f64>,
    metrics: Option<MetricsView>,
}

/// One parsed result: `values` is `None` for a failed run.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub method: String,
    pub axis_value: Option<f64>,
    pub values: Option<[f64; 3]>,
}

/// Parses JSON lines, returning the records and the number of lines skipped
/// as malformed.
pub fn parse_lines(text: &str) -> (Vec<Record>, usize) {
    let mut records = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let view: LineView = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let values = match (view.status.as_str(), view.metrics) {
            ("ok", Some(m)) => Some([m.accuracy, m.macro_f1, m.auc]),
            ("failed", _) => None,
            _ => {
                skipped += 1;
                continue;
            }
        };
        records.push(Record {
            method: view.method,
            axis_value: view.axis_value,
            values,
        });
    }
    (records, skipped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub axis_value: Option<f64>,
    pub method: String,
    pub n: usize,
    pub failed: usize,
    /// `(mean, population std)` per metric, `None` when every run failed.
    pub stats: Option<[(f64, f64); 3]>,
    /// Whether this row has the best mean of its group, per metric.
    pub best: [bool; 3],
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups records by axis value and method, in order of first appearance of
/// each method and ascending axis value, and flags the best mean per metric
/// within each axis value (ties flagged jointly).
pub fn summarize(records: &[Record]) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    let mut values: Vec<Option<f64>> = Vec::new();
    for r in records {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !values.iter().any(|v| v.map(f64::to_bits) == r.axis_value.map(f64::to_bits)) {
            values.push(r.axis_value);
        }
    }
    values.sort_by(|a, b| match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(y),
        _ => a.is_some().cmp(&b.is_some()),
    });
    let mut rows = Vec::new();
    for &value in &values {
        let start = rows.len();
        for &method in &methods {
            let group: Vec<&Record> = records
                .iter()
                .filter(|r| r.method == method && r.axis_value.map(f64::to_bits) == value.map(f64::to_bits))
                .collect();
            if group.is_empty() {
                continue;
            }
            let ok: Vec<[f64; 3]> = group.iter().filter_map(|r| r.values).collect();
            let stats = (!ok.is_empty()).then(|| {
                let mut s = [(0.0, 0.0); 3];
                for (m, slot) in s.iter_mut().enumerate() {
                    let xs: Vec<f64> = ok.iter().map(|v| v[m]).collect();
                    *slot = mean_std(&xs);
                }
                s
            });
            rows.push(SummaryRow {
                axis_value: value,
                method: method.to_string(),
                n: ok.len(),
                failed: group.len() - ok.len(),
                stats,
                best: [false; 3],
            });
        }
        let group = &mut rows[start..];
        for m in 0..3 {
            let top = group
                .iter()
                .filter_map(|r| r.stats.map(|s| s[m].0))
                .fold(f64::NEG_INFINITY, f64::max);
            for r in group.iter_mut() {
                r.best[m] = r.stats.is_some_and(|s| s[m].0 == top);
            }
        }
    }
    rows
}

/// CSV with one row per (axis value, method). `axis` names the leading
/// column when the rows come from a sweep.
pub fn to_csv(rows: &[SummaryRow], axis: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(a) = axis {
        let _ = write!(out, "{a},");
    }
    out.push_str("method,n,failed");
    for m in METRICS {
        let _ = write!(out, ",{m}_mean,{m}_std");
    }
    out.push('\n');
    for r in rows {
        if axis.is_some() {
            match r.axis_value {
                Some(v) => {
                    let _ = write!(out, "{v:?},");
                }
                None => out.push(','),
            }
        }
        let _ = write!(out, "{},{},{}", r.method, r.n, r.failed);
        for m in 0..3 {
            match r.stats {
                Some(s) => {
                    let _ = write!(out, ",{:?},{:?}", s[m].0, s[m].1);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Human-readable table; `*` marks the best mean per metric.
pub fn to_table(rows: &[SummaryRow], axis: Option<&str>) -> String {
    let mut header: Vec<String> = Vec::new();
    if let Some(a) = axis {
        header.push(a.to_string());
    }
    header.extend(["method", "n", "failed"].map(String::from));
    header.extend(METRICS.map(String::from));
    let mut table = vec![header];
    for r in rows {
        let mut cells = Vec::new();
        if axis.is_some() {
            cells.push(r.axis_value.map(|v| format!("{v:?}")).unwrap_or_default());
        }
        cells.push(r.method.clone());
        cells.push(r.n.to_string());
        cells.push(r.failed.to_string());
        for m in 0..3 {
            cells.push(match r.stats {
                Some(s) => format!("{:?} ± {:?}{}", s[m].0, s[m].1, if r.best[m] { " *" } else { "" }),
                None => "-".into(),
            });
        }
        table.push(cells);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Reads a results file, or `results.jsonl` inside a directory.
pub fn read_results(path: &Path) -> Result<(Vec<Record>, usize)> {
    let file = if path.is_dir() {
        path.join(crate::experiment::RESULTS_FILE)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    let (records, skipped) = parse_lines(&text);
    if records.is_empty() {
        bail!("no results in {}", file.display());
    }
    Ok((records, skipped))
}

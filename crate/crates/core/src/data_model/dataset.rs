use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{LacError, Result};

/// Column name used for labels when writing scenario splits.
pub const LABEL_COLUMN: &str = "label";

/// A feature matrix with optional class labels.
///
/// Labels are stored as zero-based class indices `0..class_count`. Files and
/// reports use the one-based convention (`1..=K`); convert with
/// [`Dataset::labels_one_based`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Option<Vec<usize>>, class_count: usize) -> Result<Self> {
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            let d = features.ncols().max(1);
            return Err(LacError::invalid(format!(
                "non-finite feature at row {}, column {}",
                bad / d,
                bad % d
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(LacError::Shape(format!(
                    "{} feature rows but {} labels",
                    features.nrows(),
                    labels.len()
                )));
            }
            if let Some(&y) = labels.iter().find(|&&y| y >= class_count) {
                return Err(LacError::invalid(format!(
                    "label {} outside 1..={class_count}",
                    y + 1
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn unlabeled(features: Array2<f64>) -> Result<Self> {
        Dataset::new(features, None, 0)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn labels_one_based(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| l.iter().map(|y| y + 1).collect())
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
        }
    }

    /// Indices of the examples carrying class `class`, grouped per class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_count];
        if let Some(labels) = &self.labels {
            for (i, &y) in labels.iter().enumerate() {
                groups[y].push(i);
            }
        }
        groups
    }

    pub fn drop_labels(self) -> Dataset {
        Dataset {
            features: self.features,
            labels: None,
            class_count: 0,
        }
    }

    /// Writes a CSV with header `x1..xd[,label]`; labels are one-based.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        out.push_str(&header.join(","));
        if self.labels.is_some() {
            if self.dim() > 0 {
                out.push(',');
            }
            out.push_str(LABEL_COLUMN);
        }
        out.push('\n');
        for (i, row) in self.features.outer_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            if let Some(labels) = &self.labels {
                if self.dim() > 0 {
                    out.push(',');
                }
                out.push_str(&(labels[i] + 1).to_string());
            }
            out.push('\n');
        }
        let mut file = File::create(path).map_err(|e| LacError::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| LacError::io(path, e))
    }
}

/// Result of [`load_csv`]: the dataset plus the original label strings,
/// in class-index order.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub label_names: Vec<String>,
}

/// Reads a comma-separated file with one header row.
///
/// When `label_column` is given, that column holds class labels; distinct
/// label strings are numbered in order of first appearance. Every other
/// column must parse as a finite real.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<LoadedCsv> {
    let file = File::open(path).map_err(|e| LacError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |e: csv::Error| LacError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(LacError::Csv {
            path: path.to_path_buf(),
            message: "empty file".into(),
        });
    }
    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            LacError::Csv {
                path: path.to_path_buf(),
                message: format!("no column named {name:?}"),
            }
        })?),
        None => None,
    };
    let width = headers.len();
    let d = width - usize::from(label_idx.is_some());

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows + 2);
        if record.len() != width {
            return Err(LacError::Cell {
                path: path.to_path_buf(),
                row: line,
                column: String::new(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_idx {
                let next = names.len();
                let id = *index.entry(cell.to_string()).or_insert_with(|| {
                    names.push(cell.to_string());
                    next
                });
                labels.push(id);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| LacError::Cell {
                path: path.to_path_buf(),
                row: line,
                column: headers[j].to_string(),
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(LacError::Cell {
                    path: path.to_path_buf(),
                    row: line,
                    column: headers[j].to_string(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(LacError::Csv {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    let features = Array2::from_shape_vec((rows, d), values)
        .map_err(|e| LacError::Shape(e.to_string()))?;
    let dataset = match label_idx {
        Some(_) => Dataset::new(features, Some(labels), names.len())?,
        None => Dataset::unlabeled(features)?,
    };
    Ok(LoadedCsv {
        dataset,
        label_names: names,
    })
}

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

/// Normalized benign label.
pub const BENIGN: &str = "benign";

/// Canonical label form: lowercase, with every run of non-alphanumeric
/// characters collapsed to one space and the ends trimmed.
///
/// `"Web Attack \u{2013} Brute Force"` and `"web attack - brute force"` both
/// become `"web attack brute force"`.
pub fn normalize_label(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut gap = false;
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.extend(ch.to_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

/// Labeled tabular dataset: a `K × D` row-major matrix, one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    columns: Vec<String>,
    values: Vec<f64>,
    labels: Vec<String>,
    processed: bool,
}

impl FlowTable {
    /// Labels are normalized with [`normalize_label`].
    pub fn new(columns: Vec<String>, values: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        let d = columns.len();
        if d == 0 {
            return Err(Error::Data("table has no feature columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c) {
                return Err(Error::Data(format!("duplicate column name {c:?}")));
            }
        }
        if values.len() != labels.len() * d {
            return Err(Error::Data(format!(
                "{} values for {} rows of {d} columns",
                values.len(),
                labels.len()
            )));
        }
        let labels = labels.iter().map(|l| normalize_label(l)).collect();
        Ok(FlowTable {
            columns,
            values,
            labels,
            processed: false,
        })
    }

    /// Whether the fitted pipeline has already been applied.
    pub fn is_processed(&self) -> bool {
        self.processed
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.columns.len();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.columns.len()).copied()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Row subset in the given order; the processed flag carries over.
    pub fn select(&self, idx: &[usize]) -> FlowTable {
        let d = self.columns.len();
        let mut values = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i].clone());
        }
        FlowTable {
            columns: self.columns.clone(),
            values,
            labels,
            processed: self.processed,
        }
    }

    pub fn is_benign(&self, i: usize) -> bool {
        self.labels[i] == BENIGN
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for l in &self.labels {
            *counts.entry(l.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Row-major feature matrix as a `[K, D]` tensor.
    pub fn to_tensor(&self) -> Result<crate::ndiff::Tensor> {
        crate::ndiff::Tensor::new(&[self.n_rows(), self.n_cols()], self.values.clone())
    }

    pub(crate) fn into_parts(self) -> (Vec<String>, Vec<f64>, Vec<String>) {
        (self.columns, self.values, self.labels)
    }

    pub(crate) fn from_parts(
        columns: Vec<String>,
        values: Vec<f64>,
        labels: Vec<String>,
        processed: bool,
    ) -> Self {
        FlowTable {
            columns,
            values,
            labels,
            processed,
        }
    }
}

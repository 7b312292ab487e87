use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row label of the unattacked model in the accuracy matrix.
pub const BASELINE_LABEL: &str = "baseline";

/// A labelled dense matrix; rows are models (attack targets), columns classes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl MetricMatrix {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != row_labels.len() {
            return Err(Error::InvalidPlan(alloc::format!(
                "{} row labels for {} rows",
                row_labels.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|r| r.len() != col_labels.len()) {
            return Err(Error::ShapeMismatch { expected: col_labels.len(), found: bad.len() });
        }
        Ok(Self { row_labels, col_labels, values })
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, label: &str) -> Option<&[f64]> {
        self.row_labels.iter().position(|l| l == label).map(|i| self.values[i].as_slice())
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let c = self.col_labels.iter().position(|l| l == col)?;
        self.row(row).map(|r| r[c])
    }

    /// Entry whose column label equals the row label, for every row that has one.
    pub fn diagonal(&self) -> Vec<(String, f64)> {
        self.row_labels
            .iter()
            .zip(&self.values)
            .filter_map(|(label, row)| {
                let c = self.col_labels.iter().position(|l| l == label)?;
                Some((label.clone(), row[c]))
            })
            .collect()
    }

    /// For each row with a diagonal entry: whether that entry is strictly
    /// greater than the median of the whole row.
    pub fn diagonal_exceeds_row_median(&self) -> Vec<(String, bool)> {
        self.row_labels
            .iter()
            .zip(&self.values)
            .filter_map(|(label, row)| {
                let c = self.col_labels.iter().position(|l| l == label)?;
                Some((label.clone(), row[c] > median(row)))
            })
            .collect()
    }
}

/// Median of a nonempty slice (mean of the two middle values for even length).
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Validated accuracy, paired-L2 and FID-proxy matrices plus the sampling
/// metadata they were produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    pub accuracy: MetricMatrix,
    pub l2: MetricMatrix,
    pub fid_proxy: MetricMatrix,
    pub images_per_cell: usize,
    pub seed_base: u64,
}

impl EvaluationReport {
    /// Targets whose own class accuracy did not rise above the baseline.
    pub fn target_drop(&self) -> Vec<(String, f64)> {
        let base = self.accuracy.row(BASELINE_LABEL).unwrap_or(&[]);
        self.accuracy
            .diagonal()
            .into_iter()
            .filter_map(|(label, v)| {
                let c = self.class_names.iter().position(|n| *n == label)?;
                Some((label, base.get(c)? - v))
            })
            .collect()
    }
}

/// Assembles a report, checking that all matrices share the class axis, that
/// the attacked rows agree across metrics, and that entries are in range.
pub fn build_report(
    accuracy: MetricMatrix,
    l2: MetricMatrix,
    fid_proxy: MetricMatrix,
    images_per_cell: usize,
    seed_base: u64,
) -> Result<EvaluationReport> {
    let classes = accuracy.col_labels().to_vec();
    if classes.is_empty() {
        return Err(Error::InvalidArgument("report has no classes".into()));
    }
    for (name, m) in [("l2", &l2), ("fid_proxy", &fid_proxy)] {
        if m.col_labels() != classes.as_slice() {
            return Err(Error::InvalidArgument(alloc::format!("{name} class axis differs from accuracy")));
        }
    }
    if accuracy.row_labels().first().map(String::as_str) != Some(BASELINE_LABEL) {
        return Err(Error::InvalidArgument("accuracy matrix must start with the baseline row".into()));
    }
    let targets = &accuracy.row_labels()[1..];
    if l2.row_labels() != targets || fid_proxy.row_labels() != targets {
        return Err(Error::InvalidArgument("attack rows differ between metrics".into()));
    }
    if let Some(t) = targets.iter().find(|t| !classes.contains(t)) {
        return Err(Error::InvalidArgument(alloc::format!("attack target {t:?} is not a class")));
    }
    let in_range = |m: &MetricMatrix, lo: f64, hi: f64| m.rows().iter().flatten().all(|&v| v >= lo && v <= hi);
    if !in_range(&accuracy, 0.0, 1.0) {
        return Err(Error::InvalidArgument("accuracy outside [0, 1]".into()));
    }
    if !in_range(&l2, 0.0, f64::INFINITY) || !in_range(&fid_proxy, 0.0, f64::INFINITY) {
        return Err(Error::InvalidArgument("distance entries must be finite and nonnegative".into()));
    }
    Ok(EvaluationReport { class_names: classes, accuracy, l2, fid_proxy, images_per_cell, seed_base })
}

//! Dataset ingestion, normalization, and the distance/kernel matrices the
//! rest of the pipeline consumes.
//!
//! CSV files are UTF-8, comma-delimited, with an optional single header row.
//! Class labels live in one declared column and are mapped to dense ids
//! `1..=C` in first-appearance order; empty label cells mean "unlabeled".

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{sqdist, Mat};

/// Where the label column sits in the CSV, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    None,
    Last,
    Index(usize),
}

/// Header handling. `Auto` treats the first row as a header when every
/// feature cell in it fails numeric parsing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeaderMode {
    Auto,
    Always,
    Never,
}

#[derive(Clone, Copy, Debug)]
pub struct CsvSchema {
    pub label: LabelColumn,
    pub header: HeaderMode,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema { label: LabelColumn::Last, header: HeaderMode::Auto }
    }
}

/// A numeric dataset with optional per-sample class labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    features: Mat,
    labels: Vec<Option<usize>>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(name: &str, features: Mat, labels: Vec<Option<usize>>, class_names: Vec<String>) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::Data(format!(
                "dataset {name:?} needs at least one row and one feature"
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::Contract("labels length != row count".into()));
        }
        let c = class_names.len();
        if labels.iter().flatten().any(|&l| l == 0 || l > c) {
            return Err(Error::Contract("label id outside 1..=C".into()));
        }
        let feature_names = (1..=features.cols()).map(|i| format!("f{i}")).collect();
        Ok(Dataset { name: name.to_string(), feature_names, features, labels, class_names })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    /// Copy with every label hidden; class metadata is kept so pipelines
    /// still know C. This is the view handed to pipelines so that ground
    /// truth is only reachable through the annotation oracle.
    pub fn unlabeled_view(&self) -> Dataset {
        let mut v = self.clone();
        v.labels = vec![None; self.n()];
        v
    }
}

fn parse_feature(cell: &str, line: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("non-numeric feature value {:?}", cell.trim()),
    })
}

/// Load a CSV file into a [`Dataset`].
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    load_csv_str(&text, &name, schema)
}

pub fn load_csv_str(text: &str, name: &str, schema: &CsvSchema) -> Result<Dataset> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::Data(format!("empty input: {name:?}")));
    }

    let arity = lines[0].1.split(',').count();
    let label_idx = match schema.label {
        LabelColumn::None => None,
        LabelColumn::Last => Some(arity - 1),
        LabelColumn::Index(i) => {
            if i >= arity {
                return Err(Error::Config(format!(
                    "label column {i} out of range for arity {arity}"
                )));
            }
            Some(i)
        }
    };
    if label_idx.is_some() && arity < 2 {
        return Err(Error::Data("need at least one feature besides the label".into()));
    }

    let is_header = match schema.header {
        HeaderMode::Always => true,
        HeaderMode::Never => false,
        HeaderMode::Auto => {
            let cells: Vec<&str> = lines[0].1.split(',').collect();
            cells
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != label_idx)
                .all(|(_, c)| c.trim().parse::<f64>().is_err())
        }
    };

    let mut feature_names: Vec<String> = Vec::new();
    let data_lines = if is_header {
        let cells: Vec<&str> = lines[0].1.split(',').collect();
        for (i, c) in cells.iter().enumerate() {
            if Some(i) != label_idx {
                feature_names.push(c.trim().to_string());
            }
        }
        &lines[1..]
    } else {
        &lines[..]
    };
    if data_lines.is_empty() {
        return Err(Error::Data(format!("empty input: {name:?} has a header but no rows")));
    }

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(data_lines.len());
    let mut labels: Vec<Option<usize>> = Vec::with_capacity(data_lines.len());
    let mut class_names: Vec<String> = Vec::new();
    for &(lineno, line) in data_lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != arity {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {arity} columns, found {}", cells.len()),
            });
        }
        let mut row = Vec::with_capacity(arity - usize::from(label_idx.is_some()));
        for (i, cell) in cells.iter().enumerate() {
            if Some(i) == label_idx {
                let tok = cell.trim();
                if tok.is_empty() {
                    labels.push(None);
                } else {
                    let id = match class_names.iter().position(|n| n == tok) {
                        Some(p) => p + 1,
                        None => {
                            class_names.push(tok.to_string());
                            class_names.len()
                        }
                    };
                    labels.push(Some(id));
                }
            } else {
                row.push(parse_feature(cell, lineno)?);
            }
        }
        if label_idx.is_none() {
            labels.push(None);
        }
        rows.push(row);
    }

    let features = Mat::from_rows(rows);
    let mut ds = Dataset::new(name, features, labels, class_names)?;
    if !feature_names.is_empty() {
        ds.feature_names = feature_names;
    }
    Ok(ds)
}

/// Serialize a dataset back to the CSV form `load_csv` reads. Features are
/// written in shortest round-trip decimal form, so load∘save is bit-exact.
pub fn save_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{},label", ds.feature_names.join(","));
    for i in 0..ds.n() {
        for v in ds.row(i) {
            let _ = write!(out, "{v},");
        }
        match ds.label(i) {
            Some(c) => {
                let _ = writeln!(out, "{}", ds.class_names[c - 1]);
            }
            None => {
                let _ = writeln!(out);
            }
        }
    }
    out
}

/// Z-score each column with the population standard deviation. Constant
/// columns (exact min == max) map to all zeros instead of dividing by zero.
pub fn zscore_normalize(ds: &Dataset) -> Dataset {
    let n = ds.n();
    let d = ds.d();
    let mut out = Mat::zeros(n, d);
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| ds.features.get(i, j)).collect();
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo == hi {
            continue;
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for i in 0..n {
            out.set(i, j, (col[i] - mean) / std);
        }
    }
    let mut ds2 = ds.clone();
    ds2.features = out;
    ds2
}

/// Symmetric n×n Euclidean distance matrix.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    values: Mat,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    /// Symmetric restriction to an index subset, still a valid distance
    /// matrix over those rows.
    pub fn submatrix(&self, idxs: &[usize]) -> DistanceMatrix {
        DistanceMatrix { values: self.block(idxs, idxs) }
    }

    /// Rectangular block of distances for the given row/column index sets.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Mat {
        let mut b = Mat::zeros(rows.len(), cols.len());
        for (bi, &i) in rows.iter().enumerate() {
            for (bj, &j) in cols.iter().enumerate() {
                b.set(bi, bj, self.get(i, j));
            }
        }
        b
    }

    fn offdiag_sorted(&self) -> Vec<f64> {
        let n = self.n();
        let mut v = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                v.push(self.get(i, j));
            }
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        v
    }

    /// Entry at the given percentile of the sorted off-diagonal distances.
    pub fn offdiag_percentile(&self, pct: f64) -> Option<f64> {
        let v = self.offdiag_sorted();
        if v.is_empty() {
            return None;
        }
        let idx = ((pct * v.len() as f64).ceil() as usize).saturating_sub(1).min(v.len() - 1);
        Some(v[idx])
    }

    /// Median off-diagonal distance (average of the two middles when even).
    pub fn offdiag_median(&self) -> Option<f64> {
        let v = self.offdiag_sorted();
        if v.is_empty() {
            return None;
        }
        let m = v.len();
        Some(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
    }
}

/// All-pairs Euclidean distances. The upper triangle is computed once and
/// mirrored, so symmetry is exact.
pub fn pairwise_distances(ds: &Dataset) -> DistanceMatrix {
    let n = ds.n();
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sqdist(ds.row(i), ds.row(j)).sqrt();
            m.set(i, j, d);
            m.set(j, i, d);
        }
    }
    DistanceMatrix { values: m }
}

/// Gaussian kernel evaluations over rows drawn from an existing dataset.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    values: Mat,
    bandwidth: f64,
}

impl KernelMatrix {
    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    /// Column j as a vector (the kernel footprint of one sample).
    pub fn basis_column(&self, j: usize) -> Vec<f64> {
        self.values.col(j)
    }
}

/// Entrywise `exp(-d²/σ̃²)` over a distance block. Reuses precomputed
/// distances; never recomputes them.
pub fn gaussian_kernel(dist_block: &Mat, bandwidth: f64) -> Result<KernelMatrix> {
    if !(bandwidth > 0.0) {
        return Err(Error::Config(format!(
            "kernel bandwidth must be positive, got {bandwidth}"
        )));
    }
    let mut values = Mat::zeros(dist_block.rows(), dist_block.cols());
    for i in 0..dist_block.rows() {
        for j in 0..dist_block.cols() {
            let d = dist_block.get(i, j) / bandwidth;
            values.set(i, j, (-d * d).exp());
        }
    }
    Ok(KernelMatrix { values, bandwidth })
}

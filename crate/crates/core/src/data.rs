//! Dataset ingestion, deterministic splitting and the accuracy metric.
//!
//! A [`Dataset`] is an `N x D` feature matrix with binary labels. Loading goes
//! through [`load_csv`]; evaluation splits go through [`split_three_way`]
//! (train / Universum / test) and [`kfold`] / [`kfold_stratified`].

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Neg;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file: no data rows")]
    Empty,
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("label column is not binary: found {} distinct values ({})", .found.len(), .found.join(", "))]
    NotBinary { found: Vec<String> },
    #[error("positive label {0:?} does not occur in the label column")]
    UnknownPositiveLabel(String),
    #[error("label column {0:?} not found")]
    LabelColumnNotFound(String),
    #[error("feature matrix has {rows} rows but {labels} labels were given")]
    LabelCount { rows: usize, labels: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dataset {0:?} needs samples of both classes")]
    SingleClass(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("split produced an empty {0} part")]
    EmptyPart(&'static str),
    #[error("cannot build {k} folds from {n} samples")]
    TooFewSamples { n: usize, k: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Binary class label, `+1` or `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    /// `+1` for non-negative values, `-1` otherwise.
    pub fn from_sign(v: f64) -> Label {
        if v >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl Neg for Label {
    type Output = Label;
    fn neg(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "1",
            Label::Negative => "-1",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "1" | "+1" => Ok(Label::Positive),
            "-1" => Ok(Label::Negative),
            other => Err(format!("not a label: {other:?}")),
        }
    }
}

/// Per-column min-max scaling to `[0, 1]`. Constant columns map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(features: &DMatrix<f64>) -> Self {
        let (min, max) = features
            .column_iter()
            .map(|c| (c.min(), c.max()))
            .unzip();
        MinMaxScaler { min, max }
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            let span = self.max[j] - self.min[j];
            *v = if span > 0.0 { (*v - self.min[j]) / span } else { 0.0 };
        }
    }

    pub fn transform(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = features.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let span = self.max[j] - self.min[j];
            for v in col.iter_mut() {
                *v = if span > 0.0 { (*v - self.min[j]) / span } else { 0.0 };
            }
        }
        out
    }
}

/// Feature matrix plus binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: DMatrix<f64>,
    labels: Vec<Label>,
    scaler: Option<MinMaxScaler>,
    /// Raw label value mapped to `+1`, when loaded from a file.
    positive_label: Option<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        labels: Vec<Label>,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::LabelCount {
                rows: features.nrows(),
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, row) in features.row_iter().enumerate() {
            if let Some(col) = row.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { row: i, col });
            }
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            scaler: None,
            positive_label: None,
        })
    }

    pub fn from_rows(
        name: impl Into<String>,
        rows: &[Vec<f64>],
        labels: Vec<Label>,
    ) -> Result<Self, DataError> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(DataError::MalformedRow {
                row: i,
                reason: format!("expected {d} features, got {}", rows[i].len()),
            });
        }
        let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Dataset::new(name, features, labels)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Scaling applied at load time, if any.
    pub fn scaler(&self) -> Option<&MinMaxScaler> {
        self.scaler.as_ref()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    /// All rows copied out in row-major order.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_samples()).map(|i| self.row(i)).collect()
    }

    pub fn class_indices(&self, label: Label) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn class_matrix(&self, label: Label) -> DMatrix<f64> {
        self.features.select_rows(&self.class_indices(label))
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&Label::Positive) && self.labels.contains(&Label::Negative)
    }

    pub fn require_both_classes(&self) -> Result<(), DataError> {
        if self.has_both_classes() {
            Ok(())
        } else {
            Err(DataError::SingleClass(self.name.clone()))
        }
    }

    /// Rows at `indices`, in that order. Scaling metadata is carried over.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            scaler: self.scaler.clone(),
            positive_label: self.positive_label.clone(),
        }
    }

    pub fn positive_label(&self) -> Option<&str> {
        self.positive_label.as_deref()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Min-max scale every column to `[0, 1]` and remember the scaler.
    pub fn min_max_scaled(mut self) -> Self {
        let scaler = MinMaxScaler::fit(&self.features);
        self.features = scaler.transform(&self.features);
        self.scaler = Some(scaler);
        self
    }
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Index(usize),
    Name(String),
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    /// Raw label value mapped to `+1`; defaults to the first label seen.
    pub positive_label: Option<String>,
    pub has_header: bool,
    /// Min-max scale features to `[0, 1]` after loading.
    pub scale: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            label_column: LabelColumn::Last,
            positive_label: None,
            has_header: false,
            scale: true,
        }
    }
}

struct RawTable {
    rows: Vec<Vec<f64>>,
    raw_labels: Vec<String>,
    /// 0-based line number of each data row, for error messages
    line: Vec<usize>,
}

fn read_table(path: &Path, opts: &CsvOptions, with_labels: bool) -> Result<RawTable, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = reader.records().enumerate();
    let mut label_idx: Option<usize> = match &opts.label_column {
        LabelColumn::Index(i) => Some(*i),
        _ => None,
    };
    if opts.has_header {
        let Some((_, header)) = records.next() else {
            return Err(DataError::Empty);
        };
        let header = header?;
        if let LabelColumn::Name(name) = &opts.label_column {
            label_idx = Some(
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| DataError::LabelColumnNotFound(name.clone()))?,
            );
        }
    } else if let LabelColumn::Name(name) = &opts.label_column {
        return Err(DataError::LabelColumnNotFound(name.clone()));
    }

    let mut table = RawTable {
        rows: Vec::new(),
        raw_labels: Vec::new(),
        line: Vec::new(),
    };
    let mut width: Option<usize> = None;
    for (line, record) in records {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(DataError::MalformedRow {
                row: line,
                reason: format!("expected {w} fields, found {}", record.len()),
            });
        }
        let lab = if with_labels {
            let idx = label_idx.unwrap_or(w - 1);
            if idx >= w {
                return Err(DataError::LabelColumnNotFound(idx.to_string()));
            }
            Some(idx)
        } else {
            None
        };
        let mut features = Vec::with_capacity(w);
        for (j, field) in record.iter().enumerate() {
            if Some(j) == lab {
                if field.is_empty() || field == "?" {
                    return Err(DataError::MalformedRow {
                        row: line,
                        reason: "missing label".into(),
                    });
                }
                table.raw_labels.push(field.to_string());
                continue;
            }
            if field.is_empty() || field == "?" {
                return Err(DataError::MalformedRow {
                    row: line,
                    reason: format!("missing value in column {j}"),
                });
            }
            let v: f64 = field.parse().map_err(|_| DataError::MalformedRow {
                row: line,
                reason: format!("column {j}: {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DataError::MalformedRow {
                    row: line,
                    reason: format!("column {j}: non-finite value"),
                });
            }
            features.push(v);
        }
        table.rows.push(features);
        table.line.push(line);
    }
    if table.rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(table)
}

/// Load a binary classification dataset from a comma-separated file.
///
/// `positive_label` maps to `+1`, the other raw value to `-1`. Row order is
/// preserved. Missing values (empty fields or `?`) are rejected.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let table = read_table(path, opts, true)?;

    let mut distinct: Vec<String> = Vec::new();
    for l in &table.raw_labels {
        if !distinct.contains(l) {
            distinct.push(l.clone());
        }
    }
    if distinct.len() > 2 {
        return Err(DataError::NotBinary { found: distinct });
    }
    let positive = match &opts.positive_label {
        Some(p) => {
            if !distinct.contains(p) {
                return Err(DataError::UnknownPositiveLabel(p.clone()));
            }
            p.clone()
        }
        None => distinct[0].clone(),
    };
    let labels = table
        .raw_labels
        .iter()
        .map(|l| {
            if *l == positive {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect();

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut ds = Dataset::from_rows(name, &table.rows, labels).map_err(|e| match e {
        DataError::MalformedRow { row, reason } => DataError::MalformedRow {
            row: table.line[row],
            reason,
        },
        other => other,
    })?;
    ds.positive_label = Some(positive);
    Ok(if opts.scale { ds.min_max_scaled() } else { ds })
}

/// Load a feature-only CSV (no label column), unscaled.
pub fn load_features_csv(path: impl AsRef<Path>, has_header: bool) -> Result<DMatrix<f64>, DataError> {
    let opts = CsvOptions {
        has_header,
        scale: false,
        ..CsvOptions::default()
    };
    let table = read_table(path.as_ref(), &opts, false)?;
    let d = table.rows[0].len();
    Ok(DMatrix::from_fn(table.rows.len(), d, |i, j| table.rows[i][j]))
}

/// Fractions for the train / Universum / test split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub universum_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.5,
            universum_fraction: 0.3,
            test_fraction: 0.2,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let f = [self.train_fraction, self.universum_fraction, self.test_fraction];
        if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DataError::InvalidSplit("fractions must be positive".into()));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Part sizes `(train, universum, test)` for `n` samples.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), DataError> {
        self.validate()?;
        let univ = (n as f64 * self.universum_fraction).round() as usize;
        let test = (n as f64 * self.test_fraction).round() as usize;
        if univ == 0 {
            return Err(DataError::EmptyPart("universum"));
        }
        if test == 0 {
            return Err(DataError::EmptyPart("test"));
        }
        if univ + test >= n {
            return Err(DataError::EmptyPart("train"));
        }
        Ok((n - univ - test, univ, test))
    }
}

/// Row indices of each part of a three-way split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub universum: Vec<usize>,
    pub test: Vec<usize>,
}

/// Labels interleaved so every contiguous block holds each class in
/// proportion to its overall frequency (within one sample).
fn stratified_order(labels: &[Label], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Positive).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Negative).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let key = |rank: usize, len: usize| (rank as f64 + 0.5) / len as f64;
    let mut order = Vec::with_capacity(labels.len());
    let (mut i, mut j) = (0, 0);
    while i < pos.len() || j < neg.len() {
        let take_pos = j >= neg.len() || (i < pos.len() && key(i, pos.len()) <= key(j, neg.len()));
        if take_pos {
            order.push(pos[i]);
            i += 1;
        } else {
            order.push(neg[j]);
            j += 1;
        }
    }
    order
}

pub fn split_indices(labels: &[Label], spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    let n = labels.len();
    if (n as f64) * spec.train_fraction.min(spec.universum_fraction).min(spec.test_fraction) < 1.0 {
        spec.validate()?;
        return Err(DataError::InvalidSplit(format!(
            "{n} samples are too few for the requested fractions"
        )));
    }
    let (n_train, n_univ, _) = spec.sizes(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let order = stratified_order(labels, &mut rng);
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        universum: order[n_train..n_train + n_univ].to_vec(),
        test: order[n_train + n_univ..].to_vec(),
    })
}

/// Stratified, seeded split into `(train, universum, test)`.
pub fn split_three_way(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let idx = split_indices(d.labels(), spec)?;
    Ok((d.subset(&idx.train), d.subset(&idx.universum), d.subset(&idx.test)))
}

/// Fold assignment for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Held-out indices of fold `f`, ascending.
    pub fn validation(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == f)
            .collect()
    }

    /// Training indices for fold `f` (every index not in fold `f`), ascending.
    pub fn training(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != f)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn check_folds(n: usize, k: usize) -> Result<(), DataError> {
    if k < 2 || n < k {
        return Err(DataError::TooFewSamples { n, k });
    }
    Ok(())
}

/// Shuffled k-fold plan; fold sizes differ by at most one.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    check_folds(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        assignments[i] = p % k;
    }
    Ok(FoldPlan { k, assignments })
}

/// Like [`kfold`], but each class is dealt round-robin across the folds so
/// every fold sees both labels whenever the class sizes allow it.
pub fn kfold_stratified(labels: &[Label], k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    let n = labels.len();
    check_folds(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == Label::Positive).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] == Label::Negative).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignments = vec![0; n];
    for (p, &i) in pos.iter().chain(neg.iter()).enumerate() {
        assignments[i] = p % k;
    }
    Ok(FoldPlan { k, assignments })
}

/// Percentage of matching labels: `100 * (TP + TN) / N`.
pub fn accuracy(predicted: &[Label], actual: &[Label]) -> Result<f64, DataError> {
    if predicted.len() != actual.len() {
        return Err(DataError::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(DataError::Empty);
    }
    let correct = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(100.0 * correct as f64 / predicted.len() as f64)
}

/// Distinct labels present, for diagnostics.
pub fn label_set(labels: &[Label]) -> BTreeSet<Label> {
    labels.iter().copied().collect()
}

/// Two Gaussian classes in `dim` dimensions, separated along the first axis
/// by a gap of at least `margin`.
///
/// Class means sit at `+-(margin / 2 + 2 sigma)` on the first axis; draws that
/// land inside the gap are rejected, so the classes are linearly separable.
/// Labels alternate `+1, -1, ...` in row order.
pub fn separable_blobs(n: usize, dim: usize, margin: f64, sigma: f64, seed: u64) -> Result<Dataset, DataError> {
    if dim == 0 || !(sigma > 0.0) || !(margin >= 0.0) {
        return Err(DataError::InvalidSplit(format!(
            "blobs need dim >= 1, sigma > 0, margin >= 0 (got {dim}, {sigma}, {margin})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma checked above");
    let offset = margin / 2.0 + 2.0 * sigma;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
        let s = label.sign();
        let first = loop {
            let v = s * offset + normal.sample(&mut rng);
            if s * v >= margin / 2.0 {
                break v;
            }
        };
        let mut row = vec![first];
        row.extend((1..dim).map(|_| normal.sample(&mut rng)));
        rows.push(row);
        labels.push(label);
    }
    Dataset::from_rows(format!("blobs-{seed}"), &rows, labels)
}

/// Copy of `d` with `round(fraction * N)` labels flipped, chosen uniformly
/// without replacement.
pub fn flip_labels(d: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::InvalidSplit(format!("noise fraction {fraction} outside [0, 1]")));
    }
    let n = d.n_samples();
    let k = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut labels = d.labels().to_vec();
    for &i in &idx[..k] {
        labels[i] = -labels[i];
    }
    let mut out = Dataset::new(d.name(), d.features().clone(), labels)?;
    out.scaler = d.scaler.clone();
    Ok(out)
}

//! Datasets: ingestion, preprocessing, splits, error metrics and synthetic
//! fixed-design generators.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, NyError, Result};

/// `(x_train, y_train, x_val, y_val)`.
pub type HoldOut = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);
use crate::kernel::{kernel_matrix, Lengthscales};

/// Index sets into the rows of a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(NyError::InvalidArgument(format!("split index {i} out of range (n = {n})")));
            }
            if seen[i] {
                return Err(NyError::InvalidArgument(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// What preprocessing did, serialized next to results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub task: Option<Task>,
    pub kept_features: Vec<usize>,
    pub dropped_features: Vec<usize>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub label_mean: Option<f64>,
    pub label_std: Option<f64>,
    /// Original label values, in column order of the encoded targets.
    pub classes: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub split: Option<Split>,
    pub record: PreprocessRecord,
}

fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return dim_err(format!("X has {} rows, Y has {}", x.nrows(), y.nrows()));
        }
        if x.nrows() == 0 {
            return Err(NyError::InvalidArgument("empty dataset".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(NyError::InvalidArgument("dataset contains NaN or Inf".into()));
        }
        Ok(Self { x, y, split: None, record: PreprocessRecord::default() })
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        split.validate(self.n())?;
        self.split = Some(split);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    /// Rows used to fit models: everything except the test part, in
    /// increasing index order.
    pub fn fit_indices(&self) -> Vec<usize> {
        match &self.split {
            None => (0..self.n()).collect(),
            Some(s) => {
                let mut idx: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
                idx.sort_unstable();
                idx
            }
        }
    }

    pub fn training(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let idx = self.fit_indices();
        if idx.len() == self.n() {
            return (self.x.clone(), self.y.clone());
        }
        (select_rows(&self.x, &idx), select_rows(&self.y, &idx))
    }

    /// `(x_train, y_train, x_val, y_val)` for hold-out validation.
    pub fn holdout(&self) -> Result<HoldOut> {
        let s = self
            .split
            .as_ref()
            .ok_or_else(|| NyError::InvalidArgument("hold-out needs a train/validation split".into()))?;
        if s.val.is_empty() {
            return Err(NyError::InvalidArgument("empty validation set".into()));
        }
        if s.train.is_empty() {
            return Err(NyError::InvalidArgument("empty training set".into()));
        }
        Ok((
            select_rows(&self.x, &s.train),
            select_rows(&self.y, &s.train),
            select_rows(&self.x, &s.val),
            select_rows(&self.y, &s.val),
        ))
    }

    pub fn test(&self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let s = self.split.as_ref()?;
        if s.test.is_empty() {
            return None;
        }
        Some((select_rows(&self.x, &s.test), select_rows(&self.y, &s.test)))
    }

    /// Re-split the fitting rows into train/validation, keeping the test part.
    pub fn with_validation_fraction(&self, val_frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_frac) {
            return Err(NyError::InvalidArgument(format!("validation fraction {val_frac} not in [0, 1)")));
        }
        let mut fit = self.fit_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fit.shuffle(&mut rng);
        let n_val = (val_frac * fit.len() as f64).round() as usize;
        let val = fit[..n_val].to_vec();
        let train = fit[n_val..].to_vec();
        let test = self.split.as_ref().map(|s| s.test.clone()).unwrap_or_default();
        let mut out = self.clone();
        out.split = None;
        out.with_split(Split { train, val, test })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Delimited,
    SparseIndexValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumns {
    Last,
    First,
    Indices(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Schema {
    pub delimiter: u8,
    pub has_header: bool,
    pub labels: LabelColumns,
    /// Feature count for the sparse format; inferred from the largest index
    /// when absent.
    pub n_features: Option<usize>,
}

impl Default for Schema {
    fn default() -> Self {
        Self { delimiter: b',', has_header: false, labels: LabelColumns::Last, n_features: None }
    }
}

pub fn load_dataset(path: &Path, format: Format, schema: &Schema) -> Result<Dataset> {
    match format {
        Format::Delimited => load_delimited(path, schema),
        Format::SparseIndexValue => load_sparse(path, schema),
    }
}

fn load_delimited(path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_to_err(e, 0))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_to_err(e, k + 1))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(k + 1);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| NyError::Parse { line, msg: format!("bad number {f:?}") })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(NyError::Parse { line, msg: format!("expected {w} fields, found {}", vals.len()) })
            }
            _ => {}
        }
        rows.push(vals);
    }
    let width = width.ok_or_else(|| NyError::Parse { line: 0, msg: "empty file".into() })?;
    let label_idx: Vec<usize> = match &schema.labels {
        LabelColumns::Last => vec![width - 1],
        LabelColumns::First => vec![0],
        LabelColumns::Indices(v) => v.clone(),
    };
    if label_idx.is_empty() || label_idx.iter().any(|&c| c >= width) || label_idx.len() >= width {
        return Err(NyError::InvalidArgument(format!("label columns {label_idx:?} invalid for width {width}")));
    }
    let feat_idx: Vec<usize> = (0..width).filter(|c| !label_idx.contains(c)).collect();
    let n = rows.len();
    let x = DMatrix::from_fn(n, feat_idx.len(), |r, c| rows[r][feat_idx[c]]);
    let y = DMatrix::from_fn(n, label_idx.len(), |r, c| rows[r][label_idx[c]]);
    Dataset::new(x, y)
}

fn csv_to_err(e: csv::Error, line: usize) -> NyError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => NyError::Io(io),
        other => NyError::Parse { line, msg: format!("{other:?}") },
    }
}

fn load_sparse(path: &Path, schema: &Schema) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_idx = 0usize;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        let label_tok = parts.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| NyError::Parse { line: lineno, msg: format!("bad label {label_tok:?}") })?;
        let mut row = Vec::new();
        for tok in parts {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| NyError::Parse { line: lineno, msg: format!("expected idx:val, got {tok:?}") })?;
            let idx: usize = i.parse().ok().filter(|&i: &usize| i >= 1).ok_or_else(|| NyError::Parse {
                line: lineno,
                msg: format!("bad index {i:?} (indices are 1-based)"),
            })?;
            let val: f64 = v
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| NyError::Parse { line: lineno, msg: format!("bad value {v:?}") })?;
            if let Some(d) = schema.n_features {
                if idx > d {
                    return Err(NyError::Parse { line: lineno, msg: format!("index {idx} exceeds d = {d}") });
                }
            }
            max_idx = max_idx.max(idx);
            row.push((idx - 1, val));
        }
        labels.push(label);
        entries.push(row);
    }
    if labels.is_empty() {
        return Err(NyError::Parse { line: 0, msg: "empty file".into() });
    }
    let d = schema.n_features.unwrap_or(max_idx).max(1);
    let mut x = DMatrix::<f64>::zeros(labels.len(), d);
    for (r, row) in entries.iter().enumerate() {
        for &(c, v) in row {
            x[(r, c)] = v;
        }
    }
    Dataset::new(x, DMatrix::from_column_slice(labels.len(), 1, &labels))
}

/// Write features then label columns, comma separated, full precision.
pub fn write_delimited(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..ds.n() {
        let fields: Vec<String> = ds.x.row(r).iter().chain(ds.y.row(r).iter()).map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Write the first label column and non-zero features as `label idx:val`.
pub fn write_sparse(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..ds.n() {
        write!(w, "{:?}", ds.y[(r, 0)])?;
        for c in 0..ds.d() {
            let v = ds.x[(r, c)];
            if v != 0.0 {
                write!(w, " {}:{v:?}", c + 1)?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Keep whatever split the dataset already has.
    Keep,
    /// Random split: `test` of all rows, then `val` of the remaining rows.
    Fraction {
        test: f64,
        val: f64,
    },
    Fixed(Split),
}

fn random_split(n: usize, test: f64, val: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&test) || !(0.0..1.0).contains(&val) {
        return Err(NyError::InvalidArgument("split fractions must be in [0, 1)".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_test = (test * n as f64).round() as usize;
    let rest = n - n_test;
    let n_val = (val * rest as f64).round() as usize;
    let mut test_idx = idx[..n_test].to_vec();
    let mut val_idx = idx[n_test..n_test + n_val].to_vec();
    let mut train_idx = idx[n_test + n_val..].to_vec();
    test_idx.sort_unstable();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(Split { train: train_idx, val: val_idx, test: test_idx })
}

fn mean_std(col: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = col.clone().count().max(1) as f64;
    let mean = col.clone().sum::<f64>() / n;
    let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardize features (and regression labels) with statistics from the
/// fitting rows, encode classification labels, and split.
pub fn preprocess(ds: &Dataset, task: Task, seed: u64, split_spec: &SplitSpec) -> Result<Dataset> {
    let split = match split_spec {
        SplitSpec::Keep => ds.split.clone(),
        SplitSpec::Fraction { test, val } => Some(random_split(ds.n(), *test, *val, seed)?),
        SplitSpec::Fixed(s) => Some(s.clone()),
    };
    if let Some(s) = &split {
        s.validate(ds.n())?;
    }
    let mut base = ds.clone();
    base.split = split.clone();
    let fit = base.fit_indices();
    if fit.is_empty() {
        return Err(NyError::InvalidArgument("no training rows after split".into()));
    }

    let mut record = PreprocessRecord { task: Some(task), ..Default::default() };
    let mut kept = Vec::new();
    for c in 0..ds.d() {
        let (mean, std) = mean_std(fit.iter().map(|&r| ds.x[(r, c)]));
        if std <= 1e-12 * (1.0 + mean.abs()) {
            record.dropped_features.push(c);
            record.warnings.push(format!("feature {c} has zero variance on the training rows; dropped"));
            log::warn!("dropping zero-variance feature {c}");
            continue;
        }
        kept.push(c);
        record.feature_mean.push(mean);
        record.feature_std.push(std);
    }
    if kept.is_empty() {
        return Err(NyError::InvalidArgument("every feature has zero variance".into()));
    }
    let x = DMatrix::from_fn(ds.n(), kept.len(), |r, c| {
        (ds.x[(r, kept[c])] - record.feature_mean[c]) / record.feature_std[c]
    });
    record.kept_features = kept;

    let y = match task {
        Task::Regression => {
            if ds.outputs() != 1 {
                return Err(NyError::InvalidArgument("regression expects a single label column".into()));
            }
            let (mean, std) = mean_std(fit.iter().map(|&r| ds.y[(r, 0)]));
            if std <= 0.0 {
                return Err(NyError::InvalidArgument("regression labels have zero variance".into()));
            }
            record.label_mean = Some(mean);
            record.label_std = Some(std);
            ds.y.map(|v| (v - mean) / std)
        }
        Task::Binary | Task::Multiclass => {
            if ds.outputs() != 1 {
                return Err(NyError::InvalidArgument("classification expects a single label column".into()));
            }
            let mut classes: Vec<f64> = ds.y.column(0).iter().copied().collect();
            classes.sort_by(|a, b| a.total_cmp(b));
            classes.dedup();
            if classes.len() < 2 {
                return Err(NyError::InvalidArgument("labels contain a single class".into()));
            }
            if task == Task::Binary && classes.len() != 2 {
                return Err(NyError::InvalidArgument(format!("binary task but labels have {} classes", classes.len())));
            }
            let pos = |v: f64| classes.iter().position(|&c| c == v).unwrap();
            let y = if task == Task::Binary {
                DMatrix::from_fn(ds.n(), 1, |r, _| if pos(ds.y[(r, 0)]) == 1 { 1.0 } else { -1.0 })
            } else {
                DMatrix::from_fn(ds.n(), classes.len(), |r, c| if pos(ds.y[(r, 0)]) == c { 1.0 } else { 0.0 })
            };
            record.classes = classes;
            y
        }
    };

    let mut out = Dataset::new(x, y)?;
    out.split = split;
    out.record = record;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Rmse,
    Nrmse,
    CError,
    Auc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
}

pub fn metric(kind: MetricKind, pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<MetricValue> {
    if pred.shape() != target.shape() {
        return dim_err(format!("predictions {:?} vs targets {:?}", pred.shape(), target.shape()));
    }
    let n = pred.nrows();
    if n == 0 {
        return Err(NyError::InvalidArgument("no predictions".into()));
    }
    let value = match kind {
        MetricKind::Rmse | MetricKind::Nrmse => {
            let sse: f64 = pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
            let rmse = (sse / pred.len() as f64).sqrt();
            if kind == MetricKind::Rmse {
                rmse
            } else {
                let mean = target.iter().sum::<f64>() / target.len() as f64;
                let scale = target.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if mean == 0.0 || mean.abs() <= f64::EPSILON * scale {
                    return Err(NyError::DegenerateMetric("NRMSE with zero-mean targets".into()));
                }
                (rmse / mean).abs()
            }
        }
        MetricKind::CError => {
            let wrong = (0..n)
                .filter(|&i| {
                    if pred.ncols() == 1 {
                        (pred[(i, 0)] >= 0.0) != (target[(i, 0)] > 0.0)
                    } else {
                        argmax(pred.row(i).iter()) != argmax(target.row(i).iter())
                    }
                })
                .count();
            wrong as f64 / n as f64
        }
        MetricKind::Auc => {
            if pred.ncols() != 1 {
                return Err(NyError::Unsupported("AUC is defined for a single score column".into()));
            }
            auc(pred.column(0).iter().copied(), target.column(0).iter().map(|&t| t > 0.0))?
        }
    };
    Ok(MetricValue { kind, value })
}

fn argmax<'a>(it: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mann-Whitney rank statistic; ties count one half.
fn auc(scores: impl Iterator<Item = f64>, positive: impl Iterator<Item = bool>) -> Result<f64> {
    let mut items: Vec<(f64, bool)> = scores.zip(positive).collect();
    let n_pos = items.iter().filter(|p| p.1).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(NyError::DegenerateMetric("AUC needs both classes".into()));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j + 1 < items.len() && items[j + 1].0 == items[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * items[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fixed-design regression problem with a known target function drawn as a
/// random Nystrom-KRR function.
#[derive(Debug, Clone)]
pub struct FixedDesign {
    pub x: DMatrix<f64>,
    /// `f*(x_i)` at the design points.
    pub f_star: DMatrix<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub centers: usize,
    pub lengthscale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n: 200, d: 2, sigma: 0.1, centers: 10, lengthscale: 1.0, seed: 0 }
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random `f* = sum_j a_j k(., c_j)` evaluated at `x`, scaled to unit RMS.
fn random_target(x: &DMatrix<f64>, centers: usize, lengthscale: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let c = normal_matrix(centers.max(1), x.ncols(), rng);
    let a: DVector<f64> = DVector::from_fn(centers.max(1), |_, _| StandardNormal.sample(rng));
    let ls = Lengthscales::isotropic(lengthscale, x.ncols())?;
    let f = kernel_matrix(x, &c, &ls)? * a;
    let rms = (f.norm_squared() / f.len() as f64).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    Ok(DMatrix::from_column_slice(f.len(), 1, (f * scale).as_slice()))
}

impl FixedDesign {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        if spec.n == 0 || spec.d == 0 {
            return Err(NyError::InvalidArgument("synthetic design needs n, d >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let x = normal_matrix(spec.n, spec.d, &mut rng);
        let f_star = random_target(&x, spec.centers, spec.lengthscale, &mut rng)?;
        Ok(Self { x, f_star, sigma: spec.sigma })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// One noisy draw `y = f*(x) + sigma * eps` on the fixed design.
    pub fn draw(&self, noise_seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = normal_matrix(self.n(), 1, &mut rng);
        Dataset::new(self.x.clone(), &self.f_star + noise * self.sigma)
    }

    /// Fixed-design test error `n^{-1} ||f(X) - f*(X)||^2`.
    pub fn test_error(&self, fitted: &DMatrix<f64>) -> f64 {
        (fitted - &self.f_star).norm_squared() / self.n() as f64
    }
}

/// Regression dataset with a random 70/30 train/test split.
pub fn synthetic_regression(spec: &SyntheticSpec) -> Result<Dataset> {
    let design = FixedDesign::new(spec)?;
    let ds = design.draw(spec.seed.wrapping_add(0x5eed))?;
    let split = random_split(ds.n(), 0.3, 0.0, spec.seed)?;
    ds.with_split(split)
}

/// Binary task `y = sign(f*(x) + sigma * eps)` with `sigma` tuned so that the
/// Bayes error on the sample is `bayes_error`. Returns the dataset (70/30
/// split) and the chosen sigma.
pub fn synthetic_binary(n: usize, d: usize, bayes_error: f64, seed: u64) -> Result<(Dataset, f64)> {
    if !(0.0..0.5).contains(&bayes_error) {
        return Err(NyError::InvalidArgument("Bayes error must be in [0, 0.5)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_matrix(n, d, &mut rng);
    let f = random_target(&x, 10, 1.0, &mut rng)?;
    let bayes = |sigma: f64| -> f64 { f.iter().map(|&v| normal_cdf(-v.abs() / sigma)).sum::<f64>() / f.len() as f64 };
    let (mut lo, mut hi) = (1e-6_f64, 1e3_f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if bayes(mid) < bayes_error {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = (lo * hi).sqrt();
    let noise = normal_matrix(n, 1, &mut rng);
    let y = DMatrix::from_fn(n, 1, |r, _| if f[(r, 0)] + sigma * noise[(r, 0)] >= 0.0 { 1.0 } else { -1.0 });
    let ds = Dataset::new(x, y)?;
    let split = random_split(n, 0.3, 0.0, seed.wrapping_add(1))?;
    Ok((ds.with_split(split)?, sigma))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

use nytune::data::{
    load_dataset, preprocess, synthetic_binary, synthetic_regression, Format, LabelColumns, Schema, SplitSpec,
    SyntheticSpec, Task,
};
use nytune::hyperopt::TestMonitor;
use nytune::{Dataset, MetricKind, Problem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{DataArgs, FormatArg, MetricArg, SyntheticArg, TaskArg};
use crate::error::{CliError, CliResult};

/// Prepared data shared by every command.
pub struct Prepared {
    pub data: Dataset,
    pub problem: Problem,
    pub monitor: Option<TestMonitor>,
    pub metric: MetricKind,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub source: String,
    pub n: usize,
    pub d: usize,
    pub outputs: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub sha256_x: String,
    pub sha256_y: String,
    pub sha256_split: String,
    /// Noise level of synthetic binary data chosen to hit the Bayes error.
    pub synthetic_sigma: Option<f64>,
}

fn task(t: TaskArg) -> Task {
    match t {
        TaskArg::Regression => Task::Regression,
        TaskArg::Binary => Task::Binary,
        TaskArg::Multiclass => Task::Multiclass,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_f64<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

fn fingerprint(ds: &Dataset, source: String, synthetic_sigma: Option<f64>) -> Fingerprint {
    // Row-major so the hash does not depend on the in-memory layout.
    let x: Vec<f64> = (0..ds.n()).flat_map(|r| ds.x.row(r).iter().copied().collect::<Vec<_>>()).collect();
    let y: Vec<f64> = (0..ds.n()).flat_map(|r| ds.y.row(r).iter().copied().collect::<Vec<_>>()).collect();
    let mut h = Sha256::new();
    let (mut n_train, mut n_val, mut n_test) = (ds.n(), 0, 0);
    if let Some(s) = &ds.split {
        for part in [&s.train, &s.val, &s.test] {
            h.update((part.len() as u64).to_le_bytes());
            for &i in part.iter() {
                h.update((i as u64).to_le_bytes());
            }
        }
        (n_train, n_val, n_test) = (s.train.len(), s.val.len(), s.test.len());
    }
    Fingerprint {
        source,
        n: ds.n(),
        d: ds.d(),
        outputs: ds.outputs(),
        n_train,
        n_val,
        n_test,
        sha256_x: hash_f64(x.iter()),
        sha256_y: hash_f64(y.iter()),
        sha256_split: hex(&h.finalize()),
        synthetic_sigma,
    }
}

pub fn prepare(args: &DataArgs) -> CliResult<Prepared> {
    let (data, source, sigma, task) = match &args.data {
        Some(path) => {
            let format = match args.format {
                FormatArg::Delimited => Format::Delimited,
                FormatArg::Sparse => Format::SparseIndexValue,
            };
            if !args.delimiter.is_ascii() {
                return Err(CliError::usage("--delimiter must be a single ASCII character"));
            }
            let schema = Schema {
                delimiter: args.delimiter as u8,
                has_header: args.header,
                labels: if args.label_first { LabelColumns::First } else { LabelColumns::Last },
                n_features: args.features,
            };
            let raw = load_dataset(path, format, &schema)?;
            let split = SplitSpec::Fraction { test: args.test_frac, val: 0.0 };
            let ds = preprocess(&raw, task(args.task), args.data_seed, &split)?;
            (ds, path.display().to_string(), None, args.task)
        }
        None => match args.synthetic {
            SyntheticArg::Regression => {
                let spec = SyntheticSpec {
                    n: args.n,
                    d: args.d,
                    sigma: args.noise,
                    seed: args.data_seed,
                    ..Default::default()
                };
                let raw = synthetic_regression(&spec)?;
                let ds = preprocess(&raw, Task::Regression, args.data_seed, &SplitSpec::Keep)?;
                (ds, "synthetic:regression".to_string(), None, TaskArg::Regression)
            }
            SyntheticArg::Binary => {
                let (raw, sigma) = synthetic_binary(args.n, args.d, args.bayes_error, args.data_seed)?;
                let ds = preprocess(&raw, Task::Binary, args.data_seed, &SplitSpec::Keep)?;
                (ds, "synthetic:binary".to_string(), Some(sigma), TaskArg::Binary)
            }
        },
    };
    let data = data.with_validation_fraction(args.val_frac, args.data_seed)?;
    let metric = match args.metric {
        Some(MetricArg::Rmse) => MetricKind::Rmse,
        Some(MetricArg::Nrmse) => MetricKind::Nrmse,
        Some(MetricArg::Cerror) => MetricKind::CError,
        Some(MetricArg::Auc) => MetricKind::Auc,
        None if task == TaskArg::Regression => MetricKind::Rmse,
        None => MetricKind::CError,
    };
    let problem = Problem::from_dataset(&data)?;
    let monitor = TestMonitor::from_dataset(&data, metric);
    let fingerprint = fingerprint(&data, source, sigma);
    Ok(Prepared { data, problem, monitor, metric, fingerprint })
}

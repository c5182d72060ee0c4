//! Stochastic approximations of the two trace terms.
//!
//! Hutchinson: `tr(A) ~ t^{-1} sum_i r_i^T A r_i` with zero-mean, unit-variance
//! probes. The probes are drawn once per optimization run and reused at every
//! step, so the estimated objective is a deterministic function of the
//! hyperparameters.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{NyError, Result};
use crate::nystrom::{HyperParams, NystromSystem};

/// Default number of probe vectors.
pub const DEFAULT_PROBES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeKind {
    Gaussian,
    Rademacher,
}

/// `t` fixed probe vectors stored as the columns of an n x t matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    r: DMatrix<f64>,
    kind: ProbeKind,
    seed: Option<u64>,
}

impl ProbeSet {
    /// Wrap user-supplied probes, rejecting columns that are clearly not
    /// zero-mean, unit-variance draws of the stated kind.
    pub fn from_matrix(r: DMatrix<f64>, kind: ProbeKind) -> Result<Self> {
        let (n, t) = r.shape();
        if n == 0 || t == 0 {
            return Err(NyError::InvalidArgument("probe matrix must be non-empty".into()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(NyError::InvalidArgument("non-finite probe entry".into()));
        }
        if kind == ProbeKind::Rademacher && r.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(NyError::InvalidArgument("Rademacher probes must be +-1".into()));
        }
        let nf = n as f64;
        for (j, col) in r.column_iter().enumerate() {
            let mean = col.sum() / nf;
            let m2 = col.iter().map(|v| v * v).sum::<f64>() / nf;
            let m4 = col.iter().map(|v| v.powi(4)).sum::<f64>() / nf;
            // Five-sigma bands for the sample moments of an N(0,1) column.
            let ok = mean.abs() <= 5.0 / nf.sqrt()
                && (m2 - 1.0).abs() <= 5.0 * (2.0 / nf).sqrt()
                && (m4 - 3.0).abs() <= 5.0 * (96.0 / nf).sqrt();
            if kind == ProbeKind::Gaussian && !ok {
                return Err(NyError::InvalidArgument(format!(
                    "probe column {j} is not zero-mean unit-variance (mean {mean:.3}, second moment {m2:.3}, fourth moment {m4:.3})"
                )));
            }
        }
        Ok(Self { r, kind, seed: None })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn kind(&self) -> ProbeKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    pub fn t(&self) -> usize {
        self.r.ncols()
    }
}

/// Draw `t` probes of length `n`; identical seeds give identical probes.
pub fn make_probes(n: usize, t: usize, kind: ProbeKind, seed: u64) -> Result<ProbeSet> {
    if n == 0 || t == 0 {
        return Err(NyError::InvalidArgument("make_probes needs n, t >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = DMatrix::<f64>::zeros(n, t);
    for v in r.iter_mut() {
        *v = match kind {
            ProbeKind::Gaussian => StandardNormal.sample(&mut rng),
            ProbeKind::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
    }
    Ok(ProbeSet { r, kind, seed: Some(seed) })
}

fn check_probes(n: usize, probes: &ProbeSet) -> Result<()> {
    if probes.n() != n {
        return Err(NyError::DimensionMismatch(format!("probes have n = {}, data n = {n}", probes.n())));
    }
    Ok(())
}

pub(crate) fn ste_deff_system(sys: &NystromSystem, probes: &ProbeSet) -> f64 {
    let r = probes.matrix();
    let hr = sys.fitted(r);
    r.dot(&hr) / probes.t() as f64
}

pub(crate) fn ste_trace_system(sys: &NystromSystem, probes: &ProbeSet) -> f64 {
    sys.a.tr_mul(probes.matrix()).norm_squared() / probes.t() as f64
}

/// Hutchinson estimate of the effective dimension, `t^{-1} tr(R^T H R)`.
pub fn ste_effective_dimension(data: &Dataset, hp: &HyperParams, probes: &ProbeSet) -> Result<f64> {
    let (x, _) = data.training();
    check_probes(x.nrows(), probes)?;
    Ok(ste_deff_system(&NystromSystem::new(&x, hp)?, probes))
}

/// Hutchinson estimate of `tr(K~)`; the trace-gap estimate is `n` minus this.
pub fn ste_trace_ktilde(data: &Dataset, hp: &HyperParams, probes: &ProbeSet) -> Result<f64> {
    let (x, _) = data.training();
    check_probes(x.nrows(), probes)?;
    Ok(ste_trace_system(&NystromSystem::new(&x, hp)?, probes))
}

/// `(n / p) tr(K_pm K_mm^+ K_pm^T)` over `p` rows drawn without replacement.
pub fn subsample_trace_ktilde(data: &Dataset, hp: &HyperParams, p: usize, seed: u64) -> Result<f64> {
    let (x, _) = data.training();
    let n = x.nrows();
    if p == 0 || p > n {
        return Err(NyError::InvalidArgument(format!("subsample size p = {p} must be in [1, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, p).into_vec();
    idx.sort_unstable();
    subsample_rows(&x, hp, &idx)
}

/// The same estimate for an explicit row subset.
pub fn subsample_rows(x: &DMatrix<f64>, hp: &HyperParams, rows: &[usize]) -> Result<f64> {
    let xp = DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)]);
    let sys = NystromSystem::new(&xp, hp)?;
    Ok(x.nrows() as f64 / rows.len() as f64 * sys.trace_ktilde())
}

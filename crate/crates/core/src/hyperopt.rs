//! Adam over `(log lambda, log ell, Z)` with early stopping, plus a grid
//! driver for the `(lambda, ell)` landscape.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{metric, Dataset, MetricKind};
use crate::error::{NyError, Result};
use crate::grad::{evaluate_problem, grad_problem};
use crate::kernel::Lengthscales;
use crate::nystrom::{fit_xy, predict, HyperParams};
use crate::objectives::{ObjectiveConfig, ObjectiveId, Problem, Terms};
use crate::trace_estim::{make_probes, ProbeKind, ProbeSet, DEFAULT_PROBES};

/// Largest number of rows used by the median heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Stop after this many consecutive increases; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub ste_mode: bool,
    pub t: usize,
    pub probe_kind: ProbeKind,
    pub objective: ObjectiveConfig,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_patience: 1,
            seed: 0,
            ste_mode: false,
            t: DEFAULT_PROBES,
            probe_kind: ProbeKind::Gaussian,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(NyError::InvalidArgument(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(NyError::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(NyError::InvalidArgument("Adam epsilon must be > 0".into()));
        }
        if self.ste_mode && self.t == 0 {
            return Err(NyError::InvalidArgument("STE mode needs t >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochStatus {
    Ok,
    Diverged,
}

/// One line of an optimization trajectory. `step` counts Adam updates, so
/// step 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub step: usize,
    pub status: EpochStatus,
    pub value: Option<f64>,
    pub terms: Option<Terms>,
    /// Exact objective at the same point when optimizing a stochastic one.
    pub exact_value: Option<f64>,
    pub lambda: f64,
    pub ell_min: f64,
    pub ell_max: f64,
    pub ell_geomean: f64,
    pub grad_norm: Option<f64>,
    pub test_metric: Option<f64>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub objective: ObjectiveId,
    /// Record at step 0.
    pub initial: Option<EpochRecord>,
    /// One record per epoch, steps `1..`.
    pub records: Vec<EpochRecord>,
    pub best_step: usize,
    pub best_value: Option<f64>,
    pub stopped_early: bool,
    pub diverged: Option<String>,
    pub probe_seed: Option<u64>,
}

impl Trajectory {
    /// Step 0 followed by every epoch record.
    pub fn all_records(&self) -> impl Iterator<Item = &EpochRecord> {
        self.initial.iter().chain(self.records.iter())
    }
}

/// Held-out points scored at every epoch.
#[derive(Debug, Clone)]
pub struct TestMonitor {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub kind: MetricKind,
    /// `(mean, std)` that maps standardized labels back to original units
    /// before scoring.
    pub label_scale: Option<(f64, f64)>,
}

impl TestMonitor {
    /// Score the test part of `data`, undoing label standardization recorded
    /// by preprocessing.
    pub fn from_dataset(data: &Dataset, kind: MetricKind) -> Option<Self> {
        let label_scale = match (data.record.label_mean, data.record.label_std) {
            (Some(m), Some(s)) => Some((m, s)),
            _ => None,
        };
        data.test().map(|(x, y)| Self { x, y, kind, label_scale })
    }

    /// Fit on the problem's training rows and score the test rows.
    pub fn score(&self, problem: &Problem, hp: &HyperParams) -> Result<f64> {
        let model = fit_xy(&problem.x, &problem.y, hp)?;
        let pred = predict(&model, &self.x)?;
        let value = match self.label_scale {
            Some((mean, std)) => {
                let back = |v: &DMatrix<f64>| v.map(|e| e * std + mean);
                metric(self.kind, &back(&pred), &back(&self.y))?.value
            }
            None => metric(self.kind, &pred, &self.y)?.value,
        };
        Ok(value)
    }
}

/// `lambda = 1/n`, every lengthscale set to the median pairwise distance and
/// `Z` a uniform sample of `m` training rows.
pub fn init_hyperparams(data: &Dataset, m: usize, seed: u64) -> Result<HyperParams> {
    let (x, _) = data.training();
    init_from_matrix(&x, m, seed)
}

pub fn init_from_matrix(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<HyperParams> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(NyError::InvalidArgument(format!("m = {m} must be in [1, n = {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ell = median_heuristic(x, &mut rng)?;
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    let z = DMatrix::from_fn(m, x.ncols(), |r, c| x[(idx[r], c)]);
    HyperParams::new(1.0 / n as f64, Lengthscales::isotropic(ell, x.ncols())?, z)
}

/// Median of the pairwise Euclidean distances over at most
/// [`MEDIAN_SUBSAMPLE`] rows.
pub fn median_heuristic(x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(NyError::InvalidArgument("median heuristic needs at least two points".into()));
    }
    let rows: Vec<usize> = if n > MEDIAN_SUBSAMPLE {
        let mut r = sample(rng, n, MEDIAN_SUBSAMPLE).into_vec();
        r.sort_unstable();
        r
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            dists.push((x.row(i) - x.row(j)).norm());
        }
    }
    let mid = dists.len() / 2;
    let (_, &mut med, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let med = if dists.len() % 2 == 0 {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + med)
    } else {
        med
    };
    if !(med > 0.0) {
        return Err(NyError::InvalidArgument("median pairwise distance is zero".into()));
    }
    Ok(med)
}

/// Outcome of one evaluation inside [`adam_minimize`].
pub struct StepEval<T> {
    pub value: f64,
    pub grad: Vec<f64>,
    pub extra: T,
}

/// Result of [`adam_minimize`]: visited values, the best point and how the
/// run ended.
pub struct AdamRun<T> {
    /// `(step, evaluation)` for every evaluated point.
    pub evals: Vec<(usize, StepEval<T>)>,
    pub best_params: Vec<f64>,
    pub best_step: usize,
    pub stopped_early: bool,
    /// Step and message of a failed evaluation.
    pub failure: Option<(usize, String)>,
    pub params_at_failure: Option<Vec<f64>>,
}

/// Adam with bias correction on a flat parameter vector.
///
/// The objective is evaluated at the start and after every update; the run
/// stops once the value has increased `patience` times in a row (never when
/// `patience == 0`) and returns the best point seen.
pub fn adam_minimize<T>(
    x0: &[f64],
    cfg: &OptConfig,
    mut f: impl FnMut(usize, &[f64]) -> Result<StepEval<T>>,
) -> Result<AdamRun<T>> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut run = AdamRun {
        evals: Vec::new(),
        best_params: x.clone(),
        best_step: 0,
        stopped_early: false,
        failure: None,
        params_at_failure: None,
    };
    if cfg.epochs == 0 {
        return Ok(run);
    }
    let k = x.len();
    let mut m1 = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    let mut best = f64::INFINITY;
    let mut prev = f64::INFINITY;
    let mut increases = 0;
    for step in 0..=cfg.epochs {
        let ev = match f(step, &x) {
            Ok(ev) if ev.value.is_finite() && ev.grad.iter().all(|g| g.is_finite()) => ev,
            Ok(_) => {
                run.failure = Some((step, "non-finite objective or gradient".into()));
                run.params_at_failure = Some(x);
                return Ok(run);
            }
            Err(e) => {
                run.failure = Some((step, e.to_string()));
                run.params_at_failure = Some(x);
                return Ok(run);
            }
        };
        let value = ev.value;
        if value < best {
            best = value;
            run.best_params.clone_from(&x);
            run.best_step = step;
        }
        if step > 0 && value > prev {
            increases += 1;
        } else {
            increases = 0;
        }
        prev = value;
        let grad = ev.grad.clone();
        run.evals.push((step, ev));
        if cfg.early_stop_patience > 0 && increases >= cfg.early_stop_patience {
            run.stopped_early = true;
            break;
        }
        if step == cfg.epochs {
            break;
        }
        let t = (step + 1) as i32;
        let c1 = 1.0 - cfg.adam_beta1.powi(t);
        let c2 = 1.0 - cfg.adam_beta2.powi(t);
        for i in 0..k {
            m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * grad[i];
            m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
            let mh = m1[i] / c1;
            let vh = m2[i] / c2;
            x[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
    Ok(run)
}

struct EvalExtra {
    summary: EpochRecord,
    terms: Terms,
    exact_value: Option<f64>,
    test_metric: Option<f64>,
    grad_norm: f64,
}

fn ell_summary(hp: &HyperParams) -> (f64, f64, f64) {
    let logs = hp.ls.log_values();
    let min = logs.iter().copied().fold(f64::INFINITY, f64::min).exp();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
    let geo = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
    (min, max, geo)
}

fn blank_record(step: usize, hp: &HyperParams) -> EpochRecord {
    let (ell_min, ell_max, ell_geomean) = ell_summary(hp);
    EpochRecord {
        step,
        status: EpochStatus::Ok,
        value: None,
        terms: None,
        exact_value: None,
        lambda: hp.lambda(),
        ell_min,
        ell_max,
        ell_geomean,
        grad_norm: None,
        test_metric: None,
        message: None,
    }
}

/// Minimize `id` over all hyperparameters starting from `hp0`.
///
/// In STE mode (PROP only) the probes are drawn once from `cfg.seed` and kept
/// fixed, and the exact objective is recorded next to the estimate.
pub fn optimize(
    id: ObjectiveId,
    problem: &Problem,
    cfg: &OptConfig,
    hp0: &HyperParams,
    monitor: Option<&TestMonitor>,
) -> Result<(HyperParams, Trajectory)> {
    cfg.validate()?;
    hp0.validate()?;
    if cfg.ste_mode && id != ObjectiveId::Prop {
        return Err(NyError::Unsupported(format!("STE mode is only available for PROP, not {id}")));
    }
    if id == ObjectiveId::HoldOut && problem.holdout.is_none() {
        return Err(NyError::InvalidArgument("HOLD_OUT needs a train/validation split".into()));
    }
    let probes: Option<ProbeSet> =
        if cfg.ste_mode { Some(make_probes(problem.n(), cfg.t, cfg.probe_kind, cfg.seed)?) } else { None };
    let run = adam_minimize(&hp0.to_flat(), cfg, |_, flat| {
        let hp = hp0.with_flat(flat)?;
        let (rep, grad) = grad_problem(id, problem, &hp, cfg.objective, probes.as_ref())?;
        let exact_value = match &probes {
            Some(_) => Some(evaluate_problem(id, problem, &hp, cfg.objective, None)?.value),
            None => None,
        };
        let test_metric = match monitor {
            Some(mon) => Some(mon.score(problem, &hp)?),
            None => None,
        };
        let grad_norm = grad.norm();
        Ok(StepEval {
            value: rep.value,
            grad: grad.to_flat(),
            extra: EvalExtra { summary: blank_record(0, &hp), terms: rep.terms, exact_value, test_metric, grad_norm },
        })
    })?;

    let mut records = Vec::with_capacity(run.evals.len());
    let mut initial = None;
    for (step, ev) in &run.evals {
        let mut rec = ev.extra.summary.clone();
        rec.step = *step;
        rec.value = Some(ev.value);
        rec.terms = Some(ev.extra.terms);
        rec.exact_value = ev.extra.exact_value;
        rec.test_metric = ev.extra.test_metric;
        rec.grad_norm = Some(ev.extra.grad_norm);
        if *step == 0 {
            initial = Some(rec);
        } else {
            records.push(rec);
        }
    }
    let mut traj = Trajectory {
        objective: id,
        initial,
        records,
        best_step: run.best_step,
        best_value: run.evals.iter().find(|(s, _)| *s == run.best_step).map(|(_, e)| e.value),
        stopped_early: run.stopped_early,
        diverged: None,
        probe_seed: probes.as_ref().and_then(|p| p.seed()),
    };
    if let Some((step, msg)) = &run.failure {
        let flat = run.params_at_failure.as_deref().unwrap_or(&run.best_params);
        let mut rec = match hp0.with_flat(flat) {
            Ok(hp) => blank_record(*step, &hp),
            Err(_) => blank_record(*step, hp0),
        };
        rec.status = EpochStatus::Diverged;
        rec.message = Some(msg.clone());
        if *step == 0 {
            traj.initial = Some(rec);
        } else {
            traj.records.push(rec);
        }
        traj.diverged = Some(format!("step {step}: {msg}"));
    }
    Ok((hp0.with_flat(&run.best_params)?, traj))
}

/// One `(lambda, ell)` cell of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    pub ell: f64,
    pub value: Option<f64>,
    pub terms: Option<Terms>,
    pub test_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub objective: ObjectiveId,
    /// Row-major over `(lambda, ell)`.
    pub cells: Vec<GridCell>,
    pub n_lambda: usize,
    pub n_ell: usize,
    pub argmin: Option<usize>,
}

/// Evaluate `id` on every `(lambda, ell)` pair with a shared lengthscale and
/// `Z` fixed. Failed cells are recorded with their error.
pub fn grid_search(
    id: ObjectiveId,
    problem: &Problem,
    z: &DMatrix<f64>,
    lambda_grid: &[f64],
    ell_grid: &[f64],
    cfg: ObjectiveConfig,
    monitor: Option<&TestMonitor>,
) -> Result<GridResult> {
    if lambda_grid.is_empty() || ell_grid.is_empty() {
        return Err(NyError::InvalidArgument("grids must be non-empty".into()));
    }
    let pairs: Vec<(f64, f64)> = lambda_grid.iter().flat_map(|&l| ell_grid.iter().map(move |&e| (l, e))).collect();
    let cells: Vec<GridCell> = pairs
        .par_iter()
        .map(|&(lambda, ell)| {
            let mut cell = GridCell { lambda, ell, value: None, terms: None, test_error: None, error: None };
            let hp = Lengthscales::isotropic(ell, z.ncols()).and_then(|ls| HyperParams::new(lambda, ls, z.clone()));
            let hp = match hp {
                Ok(hp) => hp,
                Err(e) => {
                    cell.error = Some(e.to_string());
                    return cell;
                }
            };
            match evaluate_problem(id, problem, &hp, cfg, None) {
                Ok(rep) => {
                    cell.value = Some(rep.value);
                    cell.terms = Some(rep.terms);
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            if let Some(mon) = monitor {
                match mon.score(problem, &hp) {
                    Ok(v) => cell.test_error = Some(v),
                    Err(e) => {
                        cell.error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            cell
        })
        .collect();
    let argmin = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.value.filter(|v| v.is_finite()).map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(GridResult { objective: id, cells, n_lambda: lambda_grid.len(), n_ell: ell_grid.len(), argmin })
}

/// `count` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max >= min) || count == 0 {
        return Err(NyError::InvalidArgument(format!("bad grid spec {min}:{max}:{count}")));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
}

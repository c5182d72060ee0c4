//! Analytic hyperparameter gradients and a finite-difference checker.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{self, EvalRequest};
use crate::error::{NyError, Result};
use crate::nystrom::HyperParams;
use crate::objectives::{ObjectiveConfig, ObjectiveId, ObjectiveReport, Problem};
use crate::trace_estim::ProbeSet;

/// Gradient with the same layout as [`HyperParams`]; `lambda` and the
/// lengthscales are differentiated in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct HpGradient {
    pub d_log_lambda: f64,
    pub d_log_ell: DVector<f64>,
    pub d_z: DMatrix<f64>,
}

impl HpGradient {
    pub fn zeros(hp: &HyperParams) -> Self {
        Self { d_log_lambda: 0.0, d_log_ell: DVector::zeros(hp.d()), d_z: DMatrix::zeros(hp.m(), hp.d()) }
    }

    /// Same ordering as [`HyperParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.d_log_ell.len() + self.d_z.len());
        v.push(self.d_log_lambda);
        v.extend(self.d_log_ell.iter());
        for i in 0..self.d_z.nrows() {
            v.extend(self.d_z.row(i).iter());
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.d_log_lambda.is_finite()
            && self.d_log_ell.iter().all(|v| v.is_finite())
            && self.d_z.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Add for HpGradient {
    type Output = HpGradient;

    fn add(self, rhs: HpGradient) -> HpGradient {
        HpGradient {
            d_log_lambda: self.d_log_lambda + rhs.d_log_lambda,
            d_log_ell: self.d_log_ell + rhs.d_log_ell,
            d_z: self.d_z + rhs.d_z,
        }
    }
}

/// Evaluate an objective on a prepared problem, with or without probes.
pub fn evaluate_problem(
    id: ObjectiveId,
    problem: &Problem,
    hp: &HyperParams,
    cfg: ObjectiveConfig,
    probes: Option<&ProbeSet>,
) -> Result<ObjectiveReport> {
    let req = EvalRequest { objective: id, config: cfg, probes, gradient: false };
    Ok(engine::evaluate(problem, hp, &req)?.0)
}

/// Value and gradient on a prepared problem.
pub fn grad_problem(
    id: ObjectiveId,
    problem: &Problem,
    hp: &HyperParams,
    cfg: ObjectiveConfig,
    probes: Option<&ProbeSet>,
) -> Result<(ObjectiveReport, HpGradient)> {
    let req = EvalRequest { objective: id, config: cfg, probes, gradient: true };
    let (rep, grad) = engine::evaluate(problem, hp, &req)?;
    let grad = grad.ok_or_else(|| NyError::Numerical { term: "gradient".into(), detail: "not computed".into() })?;
    Ok((rep, grad))
}

/// Value and gradient of an objective. With `probes` (PROP only) the trace
/// terms are Hutchinson estimates and the gradient is that of the estimate.
pub fn grad_objective(
    id: ObjectiveId,
    data: &Dataset,
    hp: &HyperParams,
    cfg: ObjectiveConfig,
    probes: Option<&ProbeSet>,
) -> Result<(ObjectiveReport, HpGradient)> {
    let problem = Problem::from_dataset(data)?;
    grad_problem(id, &problem, hp, cfg, probes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub objective: ObjectiveId,
    pub step: f64,
    pub tol: f64,
    pub value: f64,
    pub coords: Vec<CoordCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

fn coord_name(hp: &HyperParams, k: usize) -> String {
    let d = hp.d();
    if k == 0 {
        "log_lambda".into()
    } else if k <= d {
        format!("log_ell[{}]", k - 1)
    } else {
        let j = k - 1 - d;
        format!("z[{},{}]", j / d, j % d)
    }
}

/// Compare the analytic gradient with central differences in every
/// coordinate of the flat parametrization.
///
/// The relative error of a coordinate is
/// `|g - g_fd| / max(|g|, |g_fd|, floor)` with `floor = 1e-6 * max(1, |value|)`,
/// so coordinates whose true derivative is zero are judged on an absolute
/// scale instead of amplifying round-off.
pub fn grad_check(
    id: ObjectiveId,
    data: &Dataset,
    hp: &HyperParams,
    cfg: ObjectiveConfig,
    probes: Option<&ProbeSet>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let problem = Problem::from_dataset(data)?;
    grad_check_problem(id, &problem, hp, cfg, probes, step, tol)
}

pub fn grad_check_problem(
    id: ObjectiveId,
    problem: &Problem,
    hp: &HyperParams,
    cfg: ObjectiveConfig,
    probes: Option<&ProbeSet>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(NyError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let (rep, grad) = grad_problem(id, problem, hp, cfg, probes)?;
    let analytic = grad.to_flat();
    let base = hp.to_flat();
    let floor = 1e-6 * rep.value.abs().max(1.0);
    let mut coords = Vec::with_capacity(base.len());
    for (k, &g) in analytic.iter().enumerate() {
        let mut plus = base.clone();
        plus[k] += step;
        let mut minus = base.clone();
        minus[k] -= step;
        let fp = evaluate_problem(id, problem, &hp.with_flat(&plus)?, cfg, probes)?.value;
        let fm = evaluate_problem(id, problem, &hp.with_flat(&minus)?, cfg, probes)?.value;
        let numeric = (fp - fm) / (2.0 * step);
        let rel_err = (g - numeric).abs() / g.abs().max(numeric.abs()).max(floor);
        coords.push(CoordCheck { index: k, name: coord_name(hp, k), analytic: g, numeric, rel_err });
    }
    let max_rel_err = coords.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { objective: id, step, tol, value: rep.value, coords, max_rel_err, passed: max_rel_err <= tol })
}

//! Hyperparameter objectives for Nystrom KRR.
//!
//! Every objective is evaluated through the m x m whitened system, never
//! assembling an n x n matrix. `effective_dimension` is
//! `tr((K~ + n*lambda*I)^{-1} K~)` and `trace_gap` is `tr(K - K~)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{self, EvalRequest};
use crate::error::{NyError, Result};
use crate::nystrom::{HyperParams, NystromSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectiveId {
    HoldOut,
    Loocv,
    Gcv,
    Creg,
    Sgpr,
    Prop,
}

impl ObjectiveId {
    pub const ALL: [ObjectiveId; 6] = [
        ObjectiveId::HoldOut,
        ObjectiveId::Loocv,
        ObjectiveId::Gcv,
        ObjectiveId::Creg,
        ObjectiveId::Sgpr,
        ObjectiveId::Prop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveId::HoldOut => "HOLD_OUT",
            ObjectiveId::Loocv => "LOOCV",
            ObjectiveId::Gcv => "GCV",
            ObjectiveId::Creg => "CREG",
            ObjectiveId::Sgpr => "SGPR",
            ObjectiveId::Prop => "PROP",
        }
    }
}

impl fmt::Display for ObjectiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveId {
    type Err = NyError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        match key.as_str() {
            "HOLDOUT" | "VAL" | "VALIDATION" => Ok(ObjectiveId::HoldOut),
            "LOOCV" => Ok(ObjectiveId::Loocv),
            "GCV" => Ok(ObjectiveId::Gcv),
            "CREG" => Ok(ObjectiveId::Creg),
            "SGPR" => Ok(ObjectiveId::Sgpr),
            "PROP" => Ok(ObjectiveId::Prop),
            _ => Err(NyError::InvalidArgument(format!("unknown objective {s:?}"))),
        }
    }
}

/// Named terms of an objective; unused terms are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub data_fit: f64,
    pub complexity: f64,
    pub trace_gap: f64,
    pub regularizer: f64,
    pub noise_scale: f64,
}

/// Objective value with its breakdown.
///
/// How `value` is assembled from `terms`:
///
/// | objective | value |
/// |-----------|-------|
/// | HOLD_OUT, LOOCV | `data_fit` |
/// | GCV  | `data_fit / (1 - complexity / n)^2` (complexity = effective dimension) |
/// | CREG | `data_fit + complexity` |
/// | SGPR | `complexity + data_fit + trace_gap / n_lambda` (complexity = log det) |
/// | PROP | `complexity + 2 trace_gap data_fit / n_lambda + 2 (data_fit - regularizer) + reg_factor regularizer` |
///
/// For PROP `data_fit` is the regularized empirical risk and `regularizer` is
/// its `lambda ||f||^2` part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub objective: ObjectiveId,
    pub value: f64,
    pub terms: Terms,
    pub n: usize,
    /// `n * lambda` as used by the solver (includes any factorization jitter).
    pub n_lambda: f64,
    pub reg_factor: f64,
    /// True when trace terms came from stochastic estimates.
    pub stochastic: bool,
}

impl ObjectiveReport {
    /// Recompute the value from the stored terms.
    pub fn recombine(&self) -> f64 {
        let t = &self.terms;
        match self.objective {
            ObjectiveId::HoldOut | ObjectiveId::Loocv => t.data_fit,
            ObjectiveId::Gcv => {
                let s = 1.0 - t.complexity / self.n as f64;
                t.data_fit / (s * s)
            }
            ObjectiveId::Creg => t.data_fit + t.complexity,
            ObjectiveId::Sgpr => t.complexity + t.data_fit + t.trace_gap / self.n_lambda,
            ObjectiveId::Prop => {
                t.complexity
                    + 2.0 * t.trace_gap * t.data_fit / self.n_lambda
                    + 2.0 * (t.data_fit - t.regularizer)
                    + self.reg_factor * t.regularizer
            }
        }
    }
}

/// Largest `n` for which SGPR's log-determinant is computed.
pub const SGPR_MAX_N: usize = 20_000;
/// LOOCV requires `H_ii < 1 - LEVERAGE_GUARD`.
pub const LEVERAGE_GUARD: f64 = 1e-12;

/// Knobs shared by all objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Noise variance estimate for CREG and PROP.
    pub sigma2: f64,
    /// Multiplier on `lambda ||f||^2` in PROP's data term (1 or 2).
    pub prop_reg_factor: f64,
    /// PROP trace terms estimated from probes when probes are supplied.
    #[serde(default)]
    pub ste_scope: SteScope,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { sigma2: 1.0, prop_reg_factor: 2.0, ste_scope: SteScope::Both }
    }
}

/// Which of PROP's two trace terms come from Hutchinson estimates in STE mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteScope {
    /// Effective dimension and `tr(K~)`, the trace gap taken as `n - estimate`.
    #[default]
    Both,
    /// Only the effective dimension; `tr(K~)` is computed exactly.
    EffectiveDimension,
}

/// Training rows (and the hold-out partition when present) materialized once.
#[derive(Debug, Clone)]
pub struct Problem {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub holdout: Option<Holdout>,
}

#[derive(Debug, Clone)]
pub struct Holdout {
    pub x_train: DMatrix<f64>,
    pub y_train: DMatrix<f64>,
    pub x_val: DMatrix<f64>,
    pub y_val: DMatrix<f64>,
}

impl Problem {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(NyError::DimensionMismatch("X and Y must have the same, non-zero row count".into()));
        }
        Ok(Self { x, y, holdout: None })
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let (x, y) = data.training();
        let holdout = match &data.split {
            Some(s) if !s.val.is_empty() && !s.train.is_empty() => {
                let (x_train, y_train, x_val, y_val) = data.holdout()?;
                Some(Holdout { x_train, y_train, x_val, y_val })
            }
            _ => None,
        };
        Ok(Self { x, y, holdout })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

fn eval(id: ObjectiveId, data: &Dataset, hp: &HyperParams, cfg: ObjectiveConfig) -> Result<ObjectiveReport> {
    let problem = Problem::from_dataset(data)?;
    if id == ObjectiveId::HoldOut && problem.holdout.is_none() {
        return Err(NyError::InvalidArgument("HOLD_OUT needs a non-empty train/validation split".into()));
    }
    let req = EvalRequest { objective: id, config: cfg, probes: None, gradient: false };
    Ok(engine::evaluate(&problem, hp, &req)?.0)
}

pub fn evaluate(id: ObjectiveId, data: &Dataset, hp: &HyperParams, cfg: ObjectiveConfig) -> Result<ObjectiveReport> {
    eval(id, data, hp, cfg)
}

/// Validation MSE of the model fitted on the training part.
pub fn eval_holdout(data: &Dataset, hp: &HyperParams) -> Result<ObjectiveReport> {
    eval(ObjectiveId::HoldOut, data, hp, ObjectiveConfig::default())
}

/// `n^{-1} sum_i ((y_i - f(x_i)) / (1 - H_ii))^2`.
pub fn eval_loocv(data: &Dataset, hp: &HyperParams) -> Result<ObjectiveReport> {
    eval(ObjectiveId::Loocv, data, hp, ObjectiveConfig::default())
}

/// `n^{-1} sum_i ((y_i - f(x_i)) / (tr(I - H) / n))^2`.
pub fn eval_gcv(data: &Dataset, hp: &HyperParams) -> Result<ObjectiveReport> {
    eval(ObjectiveId::Gcv, data, hp, ObjectiveConfig::default())
}

/// Training MSE plus `(2 sigma^2 / n) * effective_dimension`.
pub fn eval_creg(data: &Dataset, hp: &HyperParams, sigma2: f64) -> Result<ObjectiveReport> {
    if !(sigma2 >= 0.0) {
        return Err(NyError::InvalidArgument(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    eval(ObjectiveId::Creg, data, hp, ObjectiveConfig { sigma2, ..Default::default() })
}

/// `log det(K~ + n*lambda*I) + Y^T (K~ + n*lambda*I)^{-1} Y + tr(K - K~) / (n*lambda)`.
pub fn eval_sgpr(data: &Dataset, hp: &HyperParams) -> Result<ObjectiveReport> {
    eval(ObjectiveId::Sgpr, data, hp, ObjectiveConfig::default())
}

/// The penalized complexity objective with the default `prop_reg_factor`.
pub fn eval_prop(data: &Dataset, hp: &HyperParams, sigma2: f64) -> Result<ObjectiveReport> {
    eval_prop_with(data, hp, ObjectiveConfig { sigma2, ..Default::default() })
}

pub fn eval_prop_with(data: &Dataset, hp: &HyperParams, cfg: ObjectiveConfig) -> Result<ObjectiveReport> {
    if !(cfg.sigma2 >= 0.0) {
        return Err(NyError::InvalidArgument(format!("sigma2 must be >= 0, got {}", cfg.sigma2)));
    }
    eval(ObjectiveId::Prop, data, hp, cfg)
}

/// `tr((K~ + n*lambda*I)^{-1} K~)` through the m x m form.
pub fn effective_dimension(data: &Dataset, hp: &HyperParams) -> Result<f64> {
    let (x, _) = data.training();
    Ok(NystromSystem::new(&x, hp)?.effective_dimension().max(0.0))
}

/// `tr(K - K~)`, using `k(x, x) = 1`.
pub fn trace_gap(data: &Dataset, hp: &HyperParams) -> Result<f64> {
    let (x, _) = data.training();
    let sys = NystromSystem::new(&x, hp)?;
    Ok(x.nrows() as f64 - sys.trace_ktilde())
}

//! Nystrom kernel ridge regression with gradient-based tuning of the
//! regularizer, Gaussian lengthscales and inducing points.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
mod engine;
pub mod error;
pub mod grad;
pub mod hyperopt;
pub mod kernel;
pub mod linalg;
pub mod nystrom;
pub mod objectives;
pub mod trace_estim;

pub use data::{Dataset, MetricKind, MetricValue, Split};
pub use error::{NyError, Result};
pub use grad::{grad_check, grad_objective, GradCheckReport, HpGradient};
pub use kernel::{kernel_eval, kernel_matrix, kernel_vjp, Lengthscales};
pub use nystrom::{fit, hat_apply, predict, HyperParams, NkrrModel};
pub use objectives::{ObjectiveConfig, ObjectiveId, ObjectiveReport, Problem, SteScope, Terms};
pub use trace_estim::{make_probes, ProbeKind, ProbeSet};

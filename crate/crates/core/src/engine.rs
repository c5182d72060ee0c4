//! Shared forward and reverse pass for every objective.
//!
//! All objectives are functions of the fitted values `F = H Y`, the leverages
//! `h_i = H_ii`, `tr(K~)` and `log det(K~ + s I)` where `s = n*lambda` plus
//! any solver jitter. The reverse pass accumulates cotangents for `K_nm`
//! (n x m), for the jittered `K_mm` (m x m) and for `s`, then pushes them
//! through the kernel in one blocked pass each.
//!
//! Notation: `K_mm + eps I = L L^T`, `A = K_nm L^{-T}`, `M = A^T A + s I`,
//! `W = M^{-1} L^{-1}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{NyError, Result};
use crate::grad::HpGradient;
use crate::kernel::{kernel_matrix, kernel_vjp_weighted};
use crate::nystrom::{separation_jitter_vjp, HyperParams, NystromSystem};
use crate::objectives::{
    ObjectiveConfig, ObjectiveId, ObjectiveReport, Problem, SteScope, Terms, LEVERAGE_GUARD, SGPR_MAX_N,
};
use crate::trace_estim::{ste_deff_system, ste_trace_system, ProbeSet};

/// Rows per block when adding `diag(g) A R` into the `K_nm` cotangent.
const ACC_BLOCK_ROWS: usize = 2048;

pub(crate) struct EvalRequest<'a> {
    pub objective: ObjectiveId,
    pub config: ObjectiveConfig,
    pub probes: Option<&'a ProbeSet>,
    pub gradient: bool,
}

pub(crate) fn evaluate(
    problem: &Problem,
    hp: &HyperParams,
    req: &EvalRequest,
) -> Result<(ObjectiveReport, Option<HpGradient>)> {
    hp.validate()?;
    if req.probes.is_some() && req.objective != ObjectiveId::Prop {
        return Err(NyError::Unsupported(format!(
            "stochastic trace estimation is only available for PROP, not {}",
            req.objective
        )));
    }
    if !(req.config.sigma2 >= 0.0) {
        return Err(NyError::InvalidArgument(format!("sigma2 must be >= 0, got {}", req.config.sigma2)));
    }
    match req.objective {
        ObjectiveId::HoldOut => holdout(problem, hp, req),
        _ => training_objective(problem, hp, req),
    }
}

fn check_value(term: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(NyError::Numerical { term: term.into(), detail: format!("value is {v}") })
    }
}

/// Cotangent accumulators of the reverse pass.
struct Adjoint {
    g_nm: DMatrix<f64>,
    g_mm: DMatrix<f64>,
    /// Derivative with respect to the shift `s`.
    g_s: f64,
    /// `R` in `g_nm += A R`, collected so that only one pass over A is needed.
    a_right: DMatrix<f64>,
    /// `g` and `R` in `g_nm += diag(g) A R`.
    diag_right: Option<(DVector<f64>, DMatrix<f64>)>,
}

/// Factorization-dependent m x m quantities needed by more than one pullback.
struct Cache {
    l_inv: DMatrix<f64>,
    m_inv: DMatrix<f64>,
    /// `M^{-1} L^{-1}`.
    w: DMatrix<f64>,
}

impl Cache {
    fn new(sys: &NystromSystem) -> Self {
        let eye = DMatrix::identity(sys.m, sys.m);
        let l_inv = sys.kmm_chol.solve_lower(&eye);
        let m_inv = sys.m_chol.solve(&eye);
        let w = sys.m_chol.solve(&l_inv);
        Self { l_inv, m_inv, w }
    }
}

impl Adjoint {
    fn new(n: usize, m: usize) -> Self {
        Self {
            g_nm: DMatrix::zeros(n, m),
            g_mm: DMatrix::zeros(m, m),
            g_s: 0.0,
            a_right: DMatrix::zeros(m, m),
            diag_right: None,
        }
    }

    /// Pull back `<g_f, F> + <g_beta, beta>` where `F = H rhs` and
    /// `beta = B^{-1} K_nm^T rhs`.
    fn pull_solution(
        &mut self,
        sys: &NystromSystem,
        rhs: &DMatrix<f64>,
        g_f: Option<&DMatrix<f64>>,
        g_beta: Option<&DMatrix<f64>>,
    ) {
        let c = sys.m_chol.solve(&sys.a.tr_mul(rhs));
        let beta = sys.kmm_chol.solve_upper(&c);
        let fit = &sys.a * &c;
        let mut t = DMatrix::zeros(sys.m, rhs.ncols());
        if let Some(g) = g_f {
            t += sys.a.tr_mul(g);
        }
        if let Some(gb) = g_beta {
            t += sys.kmm_chol.solve_lower(gb);
        }
        let cw = sys.m_chol.solve(&t);
        let w = sys.kmm_chol.solve_upper(&cw);
        let mut u = -(&sys.a * &cw);
        if let Some(g) = g_f {
            u += g;
        }
        self.g_nm.gemm(1.0, &u, &beta.transpose(), 1.0);
        self.g_nm.gemm(1.0, &(rhs - fit), &w.transpose(), 1.0);
        self.g_mm.gemm(-sys.shift, &w, &beta.transpose(), 1.0);
        self.g_s -= cw.dot(&c);
    }

    /// Pull back `sum_i g_i H_ii`.
    fn pull_leverage(&mut self, sys: &NystromSystem, cache: &Cache, g: &DVector<f64>) {
        let gmat = sys.weighted_gram(g.as_slice());
        self.pull_leverage_gram(sys, cache, &gmat);
        match &mut self.diag_right {
            Some((acc, _)) => *acc += g,
            None => self.diag_right = Some((g.clone(), &cache.w * 2.0)),
        }
    }

    /// Pull back `gamma * tr(H)`.
    fn pull_effective_dimension(&mut self, sys: &NystromSystem, cache: &Cache, gamma: f64) {
        let gmat = &sys.gram * gamma;
        self.pull_leverage_gram(sys, cache, &gmat);
        // diag(gamma) A 2W is a plain A-product.
        self.a_right += &cache.w * (2.0 * gamma);
    }

    /// The part of the leverage pullback that only depends on `G = A^T D A`.
    fn pull_leverage_gram(&mut self, sys: &NystromSystem, cache: &Cache, gmat: &DMatrix<f64>) {
        let q = &cache.m_inv * gmat;
        let qw = &q * &cache.w;
        self.a_right += &qw * (-2.0);
        let lt_qw = sys.kmm_chol.solve_upper(&qw);
        self.g_mm += &lt_qw * (-sys.shift);
        self.g_s -= (&q * &cache.m_inv).trace();
    }

    /// Pull back `c * tr(K~)` computed exactly as `||A||_F^2`.
    fn pull_trace_exact(&mut self, sys: &NystromSystem, cache: &Cache, c: f64) {
        self.a_right += &cache.l_inv * (2.0 * c);
        let inner = cache.l_inv.tr_mul(&(&sys.gram * &cache.l_inv));
        self.g_mm += &inner * (-c);
    }

    /// Pull back `c * ||A^T R||_F^2 / t`.
    fn pull_trace_ste(&mut self, sys: &NystromSystem, probes: &ProbeSet, c: f64) {
        let r = probes.matrix();
        let t = probes.t() as f64;
        let u = sys.kmm_chol.solve_upper(&sys.a.tr_mul(r));
        self.g_nm.gemm(2.0 * c / t, r, &u.transpose(), 1.0);
        self.g_mm.gemm(-c / t, &u, &u.transpose(), 1.0);
    }

    /// Pull back `c * tr(R^T H R) / t`.
    fn pull_deff_ste(&mut self, sys: &NystromSystem, probes: &ProbeSet, c: f64) {
        let r = probes.matrix();
        let g = r * (c / probes.t() as f64);
        self.pull_solution(sys, r, Some(&g), None);
    }

    /// Pull back `c * log det(K~ + s I)`.
    fn pull_logdet(&mut self, sys: &NystromSystem, cache: &Cache, c: f64) {
        self.a_right += &cache.w * (2.0 * c);
        let lw = sys.kmm_chol.solve_upper(&cache.w);
        let ll = cache.l_inv.tr_mul(&cache.l_inv);
        self.g_mm += &lw * (c * sys.shift);
        self.g_mm += &ll * (-c);
        let n = sys.n as f64;
        let m = sys.m as f64;
        self.g_s += c * ((n - m) / sys.shift + cache.m_inv.trace());
    }

    /// Fold the collected right factors into `g_nm`, one row block at a time.
    fn flush(&mut self, sys: &NystromSystem) {
        let n = sys.n;
        let m = sys.m;
        let mut r0 = 0;
        while r0 < n {
            let rows = ACC_BLOCK_ROWS.min(n - r0);
            let a_blk = sys.a.rows(r0, rows);
            let mut out = self.g_nm.rows_mut(r0, rows);
            out.gemm(1.0, &a_blk, &self.a_right, 1.0);
            if let Some((g, right)) = &self.diag_right {
                let mut scaled = a_blk.clone_owned();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= g[r0 + i];
                }
                out.gemm(1.0, &scaled, right, 1.0);
            }
            r0 += rows;
        }
        self.a_right = DMatrix::zeros(m, m);
        self.diag_right = None;
    }

    fn check(&self, term: &str) -> Result<()> {
        let bad = !self.g_s.is_finite()
            || self.g_nm.iter().any(|v| !v.is_finite())
            || self.g_mm.iter().any(|v| !v.is_finite())
            || self.a_right.iter().any(|v| !v.is_finite())
            || self.diag_right.as_ref().is_some_and(|(g, r)| g.iter().chain(r.iter()).any(|v| !v.is_finite()));
        if bad {
            Err(NyError::Numerical { term: term.into(), detail: "non-finite gradient contribution".into() })
        } else {
            Ok(())
        }
    }

    /// Push the accumulated cotangents through the kernel.
    fn finish(mut self, sys: &NystromSystem, x: &DMatrix<f64>, hp: &HyperParams) -> Result<HpGradient> {
        self.flush(sys);
        let mut grad = HpGradient::zeros(hp);
        let kx = kernel_vjp_weighted(x, &hp.z, &hp.ls, &self.g_nm)?;
        let kz = kernel_vjp_weighted(&hp.z, &hp.z, &hp.ls, &self.g_mm)?;
        grad.d_log_ell += kx.log_ell + kz.log_ell;
        grad.d_z += kx.b + kz.a + kz.b;
        separation_jitter_vjp(&hp.z, &hp.ls, &self.g_mm, &mut grad.d_log_ell, &mut grad.d_z);
        grad.d_log_lambda = self.g_s * sys.n as f64 * sys.lambda;
        Ok(grad)
    }
}

fn check_grad(grad: &HpGradient) -> Result<()> {
    if !grad.d_log_lambda.is_finite() {
        return Err(NyError::Numerical { term: "log_lambda".into(), detail: "non-finite derivative".into() });
    }
    if grad.d_log_ell.iter().any(|v| !v.is_finite()) {
        return Err(NyError::Numerical { term: "log_lengthscales".into(), detail: "non-finite derivative".into() });
    }
    if grad.d_z.iter().any(|v| !v.is_finite()) {
        return Err(NyError::Numerical { term: "inducing_points".into(), detail: "non-finite derivative".into() });
    }
    Ok(())
}

fn report(objective: ObjectiveId, value: f64, terms: Terms, sys: &NystromSystem, req: &EvalRequest) -> ObjectiveReport {
    ObjectiveReport {
        objective,
        value,
        terms,
        n: sys.n,
        n_lambda: sys.shift,
        reg_factor: req.config.prop_reg_factor,
        stochastic: req.probes.is_some(),
    }
}

fn holdout(problem: &Problem, hp: &HyperParams, req: &EvalRequest) -> Result<(ObjectiveReport, Option<HpGradient>)> {
    let ho = problem
        .holdout
        .as_ref()
        .ok_or_else(|| NyError::InvalidArgument("HOLD_OUT needs a non-empty train/validation split".into()))?;
    if ho.x_val.nrows() == 0 {
        return Err(NyError::InvalidArgument("empty validation set".into()));
    }
    let sys = NystromSystem::new(&ho.x_train, hp)?;
    let beta = sys.coefficients(&ho.y_train);
    let kvz = kernel_matrix(&ho.x_val, &hp.z, &hp.ls)?;
    let resid = &kvz * &beta - &ho.y_val;
    let nv = ho.x_val.nrows() as f64;
    let value = resid.norm_squared() / nv;
    check_value("data_fit", value)?;
    let terms = Terms { data_fit: value, ..Default::default() };
    let rep = report(ObjectiveId::HoldOut, value, terms, &sys, req);
    if !req.gradient {
        return Ok((rep, None));
    }
    let g_fv = resid * (2.0 / nv);
    let g_beta = kvz.tr_mul(&g_fv);
    drop(kvz);
    let mut adj = Adjoint::new(sys.n, sys.m);
    adj.pull_solution(&sys, &ho.y_train, None, Some(&g_beta));
    adj.check("data_fit")?;
    let mut grad = adj.finish(&sys, &ho.x_train, hp)?;
    let g_vz = g_fv * beta.transpose();
    let kv = kernel_vjp_weighted(&ho.x_val, &hp.z, &hp.ls, &g_vz)?;
    grad.d_log_ell += kv.log_ell;
    grad.d_z += kv.b;
    check_grad(&grad)?;
    Ok((rep, Some(grad)))
}

fn training_objective(
    problem: &Problem,
    hp: &HyperParams,
    req: &EvalRequest,
) -> Result<(ObjectiveReport, Option<HpGradient>)> {
    let id = req.objective;
    let x = &problem.x;
    let y = &problem.y;
    let n = x.nrows();
    if id == ObjectiveId::Sgpr && n > SGPR_MAX_N {
        return Err(NyError::Unsupported(format!("SGPR log-determinant is limited to n <= {SGPR_MAX_N}, got n = {n}")));
    }
    if let Some(p) = req.probes {
        if p.n() != n {
            return Err(NyError::DimensionMismatch(format!("probes have n = {}, data n = {n}", p.n())));
        }
    }
    let sys = NystromSystem::new(x, hp)?;
    let nf = n as f64;
    let s = sys.shift;
    let fit = sys.fitted(y);
    let resid = y - &fit;
    let rss = resid.norm_squared();
    let mse = rss / nf;
    let y2 = y.norm_squared();
    let sfit = y.dot(&fit);
    let sigma2 = req.config.sigma2;
    let rf = req.config.prop_reg_factor;

    let mut adj = if req.gradient { Some(Adjoint::new(n, sys.m)) } else { None };
    let cache = if req.gradient { Some(Cache::new(&sys)) } else { None };

    let (value, terms) = match id {
        ObjectiveId::Loocv => {
            let h = sys.leverages();
            if let Some((i, &hi)) = h.iter().enumerate().find(|(_, &hi)| !(hi < 1.0 - LEVERAGE_GUARD)) {
                return Err(NyError::DegenerateLeverage { index: i, value: hi });
            }
            let mut value = 0.0;
            for (i, &hi) in h.iter().enumerate() {
                let den = 1.0 - hi;
                value += resid.row(i).norm_squared() / (den * den);
            }
            value /= nf;
            check_value("data_fit", value)?;
            if let (Some(adj), Some(cache)) = (adj.as_mut(), cache.as_ref()) {
                let mut g_f = resid.clone();
                let mut g_h = DVector::zeros(n);
                for (i, &hi) in h.iter().enumerate() {
                    let den = 1.0 - hi;
                    g_f.row_mut(i).scale_mut(-2.0 / (nf * den * den));
                    g_h[i] = 2.0 * resid.row(i).norm_squared() / (nf * den * den * den);
                }
                adj.pull_solution(&sys, y, Some(&g_f), None);
                adj.pull_leverage(&sys, cache, &g_h);
                adj.check("data_fit")?;
            }
            (value, Terms { data_fit: value, ..Default::default() })
        }
        ObjectiveId::Gcv => {
            let deff = sys.effective_dimension();
            let tau = nf - deff;
            if !(tau > 1e-12) {
                return Err(NyError::DegenerateTrace(tau));
            }
            let value = nf * rss / (tau * tau);
            check_value("data_fit", value)?;
            if let (Some(adj), Some(cache)) = (adj.as_mut(), cache.as_ref()) {
                let g_f = &resid * (-2.0 * nf / (tau * tau));
                adj.pull_solution(&sys, y, Some(&g_f), None);
                adj.check("data_fit")?;
                adj.pull_effective_dimension(&sys, cache, 2.0 * nf * rss / (tau * tau * tau));
                adj.check("complexity")?;
            }
            (value, Terms { data_fit: mse, complexity: deff, ..Default::default() })
        }
        ObjectiveId::Creg => {
            let deff = sys.effective_dimension();
            let pen = 2.0 * sigma2 / nf * deff;
            check_value("data_fit", mse)?;
            check_value("complexity", pen)?;
            if let (Some(adj), Some(cache)) = (adj.as_mut(), cache.as_ref()) {
                let g_f = &resid * (-2.0 / nf);
                adj.pull_solution(&sys, y, Some(&g_f), None);
                adj.check("data_fit")?;
                adj.pull_effective_dimension(&sys, cache, 2.0 * sigma2 / nf);
                adj.check("complexity")?;
            }
            (mse + pen, Terms { data_fit: mse, complexity: pen, noise_scale: sigma2, ..Default::default() })
        }
        ObjectiveId::Sgpr => {
            let logdet = sys.log_det_ktilde_shifted();
            let quad = (y2 - sfit) / s;
            let gap = nf - sys.trace_ktilde();
            check_value("complexity", logdet)?;
            check_value("data_fit", quad)?;
            check_value("trace_gap", gap / s)?;
            if let (Some(adj), Some(cache)) = (adj.as_mut(), cache.as_ref()) {
                adj.pull_logdet(&sys, cache, 1.0);
                adj.check("complexity")?;
                let g_f = y * (-1.0 / s);
                adj.pull_solution(&sys, y, Some(&g_f), None);
                adj.g_s -= (y2 - sfit) / (s * s);
                adj.check("data_fit")?;
                adj.pull_trace_exact(&sys, cache, -1.0 / s);
                adj.g_s -= gap / (s * s);
                adj.check("trace_gap")?;
            }
            let value = logdet + quad + gap / s;
            (value, Terms { data_fit: quad, complexity: logdet, trace_gap: gap, ..Default::default() })
        }
        ObjectiveId::Prop => {
            let trace_probes = req.probes.filter(|_| req.config.ste_scope == SteScope::Both);
            let deff = match req.probes {
                Some(p) => ste_deff_system(&sys, p),
                None => sys.effective_dimension(),
            };
            let trk = match trace_probes {
                Some(p) => ste_trace_system(&sys, p),
                None => sys.trace_ktilde(),
            };
            let gap = nf - trk;
            let lhat = (y2 - sfit) / nf;
            let complexity = 2.0 * sigma2 / nf * deff;
            let value = complexity + 2.0 * gap * lhat / s + (2.0 - rf) * mse + rf * lhat;
            check_value("complexity", complexity)?;
            check_value("trace_gap", gap)?;
            check_value("data_fit", lhat)?;
            check_value("value", value)?;
            if let (Some(adj), Some(cache)) = (adj.as_mut(), cache.as_ref()) {
                let c_deff = 2.0 * sigma2 / nf;
                match req.probes {
                    Some(p) => adj.pull_deff_ste(&sys, p, c_deff),
                    None => adj.pull_effective_dimension(&sys, cache, c_deff),
                }
                adj.check("complexity")?;
                let c_l = 2.0 * gap / s + rf;
                let g_f = y * (-c_l / nf) + &resid * (-2.0 * (2.0 - rf) / nf);
                adj.pull_solution(&sys, y, Some(&g_f), None);
                adj.check("data_fit")?;
                let c_trk = -2.0 * lhat / s;
                match trace_probes {
                    Some(p) => adj.pull_trace_ste(&sys, p, c_trk),
                    None => adj.pull_trace_exact(&sys, cache, c_trk),
                }
                adj.g_s -= 2.0 * gap * lhat / (s * s);
                adj.check("trace_gap")?;
            }
            let terms =
                Terms { data_fit: lhat, complexity, trace_gap: gap, regularizer: lhat - mse, noise_scale: sigma2 };
            (value, terms)
        }
        ObjectiveId::HoldOut => unreachable!("handled separately"),
    };

    let rep = report(id, value, terms, &sys, req);
    match adj {
        None => Ok((rep, None)),
        Some(adj) => {
            let grad = adj.finish(&sys, x, hp)?;
            check_grad(&grad)?;
            Ok((rep, Some(grad)))
        }
    }
}

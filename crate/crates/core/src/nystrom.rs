//! Closed-form Nystrom kernel ridge regression.
//!
//! With `B = K_nm^T K_nm + n*lambda*K_mm` the coefficients are
//! `beta = B^{-1} K_nm^T Y`. Internally everything is computed in whitened
//! coordinates: with `K_mm + eps*I = L L^T` and `A = K_nm L^{-T}`,
//! `B = L (A^T A + n*lambda*I) L^T`, so only the well-conditioned
//! `M = A^T A + n*lambda*I` is ever factored together with `L`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dim_err, NyError, Result};
use crate::kernel::{kernel_matrix, Lengthscales};
use crate::linalg::{cholesky_jittered, cholesky_pd, pinv_sym, JitteredCholesky, PINV_RCOND};

/// The differentiable hyperparameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub log_lambda: f64,
    pub ls: Lengthscales,
    /// Inducing points, one per row.
    pub z: DMatrix<f64>,
}

impl HyperParams {
    pub fn new(lambda: f64, ls: Lengthscales, z: DMatrix<f64>) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(NyError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        Self::from_log(lambda.ln(), ls, z)
    }

    pub fn from_log(log_lambda: f64, ls: Lengthscales, z: DMatrix<f64>) -> Result<Self> {
        let hp = Self { log_lambda, ls, z };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.nrows() == 0 {
            return Err(NyError::InvalidArgument("need at least one inducing point".into()));
        }
        if self.z.ncols() != self.ls.dim() {
            return dim_err(format!("Z has {} columns, lengthscales {}", self.z.ncols(), self.ls.dim()));
        }
        if !self.log_lambda.is_finite() || self.z.iter().any(|v| !v.is_finite()) {
            return Err(NyError::InvalidArgument("non-finite hyperparameter".into()));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    pub fn m(&self) -> usize {
        self.z.nrows()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    /// Number of scalar coordinates: `1 + d + m*d`.
    pub fn num_params(&self) -> usize {
        1 + self.d() + self.m() * self.d()
    }

    /// Flatten as `[log_lambda, log_ell.., Z row-major..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.push(self.log_lambda);
        v.extend_from_slice(self.ls.log_values());
        for i in 0..self.m() {
            v.extend(self.z.row(i).iter());
        }
        v
    }

    /// Inverse of [`HyperParams::to_flat`] using `self` for the shapes.
    pub fn with_flat(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.num_params() {
            return dim_err(format!("expected {} parameters, got {}", self.num_params(), v.len()));
        }
        let d = self.d();
        let ls = Lengthscales::from_log(v[1..1 + d].to_vec())?;
        let z = DMatrix::from_row_slice(self.m(), d, &v[1 + d..]);
        Self::from_log(v[0], ls, z)
    }

    pub fn to_record(&self) -> HyperParamsRecord {
        HyperParamsRecord {
            lambda: self.lambda(),
            log_lambda: self.log_lambda,
            lengthscales: self.ls.values(),
            log_lengthscales: self.ls.log_values().to_vec(),
            inducing_points: (0..self.m()).map(|i| self.z.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn from_record(rec: &HyperParamsRecord) -> Result<Self> {
        let d = rec.log_lengthscales.len();
        if rec.inducing_points.iter().any(|r| r.len() != d) {
            return dim_err("inducing point rows must match the lengthscale dimension");
        }
        let flat: Vec<f64> = rec.inducing_points.iter().flatten().copied().collect();
        let z = DMatrix::from_row_slice(rec.inducing_points.len(), d, &flat);
        Self::from_log(rec.log_lambda, Lengthscales::from_log(rec.log_lengthscales.clone())?, z)
    }
}

/// Serialized form of [`HyperParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParamsRecord {
    pub lambda: f64,
    pub log_lambda: f64,
    pub lengthscales: Vec<f64>,
    pub log_lengthscales: Vec<f64>,
    pub inducing_points: Vec<Vec<f64>>,
}

/// A fitted model: `f(x) = sum_j beta_j k(x, z_j)`.
#[derive(Debug, Clone)]
pub struct NkrrModel {
    pub beta: DMatrix<f64>,
    pub hp: HyperParams,
}

/// Rows per block for leverage computations.
const LEVERAGE_BLOCK_ROWS: usize = 2048;

/// Factorized normal equations for one `(X, hp)` pair.
#[derive(Debug, Clone)]
pub(crate) struct NystromSystem {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    /// `n * lambda` plus any jitter the factorization of `M` needed.
    pub shift: f64,
    pub kmm_chol: JitteredCholesky,
    /// `K_nm L^{-T}`.
    pub a: DMatrix<f64>,
    /// `A^T A`.
    pub gram: DMatrix<f64>,
    pub m_chol: JitteredCholesky,
}

impl NystromSystem {
    pub fn new(x: &DMatrix<f64>, hp: &HyperParams) -> Result<Self> {
        hp.validate()?;
        if x.ncols() != hp.d() {
            return dim_err(format!("data has d = {}, hyperparameters d = {}", x.ncols(), hp.d()));
        }
        let n = x.nrows();
        if n == 0 {
            return Err(NyError::InvalidArgument("n must be at least 1".into()));
        }
        let m = hp.m();
        let lambda = hp.lambda();
        let mut kmm = kernel_matrix(&hp.z, &hp.z, &hp.ls)?;
        add_separation_jitter(&mut kmm, &hp.z, &hp.ls);
        let kmm_chol = cholesky_jittered(&kmm)?;
        let mut a = kernel_matrix(x, &hp.z, &hp.ls)?;
        right_solve_lower_transpose(&mut a, kmm_chol.l_ref());
        let gram = a.tr_mul(&a);
        let nl = n as f64 * lambda;
        let mut mmat = gram.clone();
        for i in 0..m {
            mmat[(i, i)] += nl;
        }
        let m_chol = cholesky_pd(&mmat)?;
        let shift = nl + m_chol.jitter;
        Ok(Self { n, m, lambda, shift, kmm_chol, a, gram, m_chol })
    }

    /// `beta = B^{-1} K_nm^T y`.
    pub fn coefficients(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.a.tr_mul(y);
        self.kmm_chol.solve_upper(&self.m_chol.solve(&t))
    }

    /// `H y = K_nm beta(y)`.
    pub fn fitted(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.m_chol.solve(&self.a.tr_mul(y));
        &self.a * t
    }

    /// Leverages `H_ii = a_i^T M^{-1} a_i`, computed one row block at a time.
    pub fn leverages(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n);
        let mut r0 = 0;
        while r0 < self.n {
            let rows = LEVERAGE_BLOCK_ROWS.min(self.n - r0);
            // C^{-1} A_blk^T where M = C C^T.
            let mut w = self.a.rows(r0, rows).transpose();
            self.m_chol.l_ref().solve_lower_triangular_mut(&mut w);
            out.extend(w.column_iter().map(|c| c.norm_squared()));
            r0 += rows;
        }
        out
    }

    /// `A^T diag(g) A`, accumulated over row blocks.
    pub fn weighted_gram(&self, g: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.m, self.m);
        let mut r0 = 0;
        while r0 < self.n {
            let rows = LEVERAGE_BLOCK_ROWS.min(self.n - r0);
            let blk = self.a.rows(r0, rows);
            let mut scaled = blk.clone_owned();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row *= g[r0 + i];
            }
            out.gemm_tr(1.0, &blk, &scaled, 1.0);
            r0 += rows;
        }
        out
    }

    /// `tr(K_nm B^{-1} K_nm^T) = m - shift * tr(M^{-1})`.
    pub fn effective_dimension(&self) -> f64 {
        let minv = self.m_chol.solve(&DMatrix::identity(self.m, self.m));
        self.m as f64 - self.shift * crate::linalg::trace(&minv)
    }

    /// `tr(K_nm (K_mm + eps I)^{-1} K_nm^T) = ||A||_F^2`.
    pub fn trace_ktilde(&self) -> f64 {
        self.a.norm_squared()
    }

    /// `log det(K~ + shift I)` through the m x m identity.
    pub fn log_det_ktilde_shifted(&self) -> f64 {
        (self.n as f64 - self.m as f64) * self.shift.ln() + self.m_chol.log_det()
    }
}

/// Extra regularization of `K_mm` along `e_i - e_j` for each pair of
/// (nearly) coincident inducing points.
pub const SEPARATION_JITTER: f64 = 1e-2;
/// Distance, in lengthscale units, below which a pair counts as coincident.
pub const SEPARATION_RADIUS: f64 = 1e-3;
/// Pairs with `u / (2 rho^2)` above this contribute exactly nothing.
const SEPARATION_CUTOFF: f64 = 700.0;

/// Pairs `(i, j, w_ij)` with `w_ij = exp(-|(z_i - z_j) / ell|^2 / (2 rho^2))`
/// non-negligible.
fn separation_pairs(z: &DMatrix<f64>, ls: &Lengthscales) -> Vec<(usize, usize, f64)> {
    let inv: Vec<f64> = ls.values().iter().map(|l| 1.0 / l).collect();
    let denom = 2.0 * SEPARATION_RADIUS * SEPARATION_RADIUS;
    let mut out = Vec::new();
    for i in 0..z.nrows() {
        for j in i + 1..z.nrows() {
            let u: f64 = (0..z.ncols()).map(|k| ((z[(i, k)] - z[(j, k)]) * inv[k]).powi(2)).sum();
            let e = u / denom;
            if e < SEPARATION_CUTOFF {
                out.push((i, j, (-e).exp()));
            }
        }
    }
    out
}

/// `K_mm += kappa * sum_{i<j} w_ij (e_i - e_j)(e_i - e_j)^T`.
///
/// For well separated points this is exactly zero. For coincident points it
/// lifts only the null direction `e_i - e_j`, which `K_nm` does not see, and
/// keeps the computed objective smooth as the points move apart.
pub(crate) fn add_separation_jitter(kmm: &mut DMatrix<f64>, z: &DMatrix<f64>, ls: &Lengthscales) {
    for (i, j, w) in separation_pairs(z, ls) {
        let v = SEPARATION_JITTER * w;
        kmm[(i, i)] += v;
        kmm[(j, j)] += v;
        kmm[(i, j)] -= v;
        kmm[(j, i)] -= v;
    }
}

/// Gradient of `sum_ab G_ab * (separation term)_ab` with respect to the
/// log-lengthscales and `Z`.
pub(crate) fn separation_jitter_vjp(
    z: &DMatrix<f64>,
    ls: &Lengthscales,
    g: &DMatrix<f64>,
    d_log_ell: &mut DVector<f64>,
    d_z: &mut DMatrix<f64>,
) {
    let ell = ls.values();
    let r2 = SEPARATION_RADIUS * SEPARATION_RADIUS;
    for (i, j, w) in separation_pairs(z, ls) {
        let q = g[(i, i)] + g[(j, j)] - g[(i, j)] - g[(j, i)];
        let c = SEPARATION_JITTER * q * w / r2;
        for k in 0..z.ncols() {
            let diff = (z[(i, k)] - z[(j, k)]) / ell[k];
            d_z[(i, k)] -= c * diff / ell[k];
            d_z[(j, k)] += c * diff / ell[k];
            d_log_ell[k] += c * diff * diff;
        }
    }
}

/// Solve `X L^T = A` for `X` in place, `L` lower triangular (m x m).
fn right_solve_lower_transpose(a: &mut DMatrix<f64>, l: &DMatrix<f64>) {
    let m = l.nrows();
    for j in 0..m {
        for k in 0..j {
            let coef = l[(j, k)];
            if coef != 0.0 {
                let (left, mut right) = a.columns_range_pair_mut(k, j..);
                right.column_mut(0).axpy(-coef, &left, 1.0);
            }
        }
        let d = l[(j, j)];
        a.column_mut(j).scale_mut(1.0 / d);
    }
}

/// Fit on the training rows of `data` (all rows except the test split).
pub fn fit(data: &Dataset, hp: &HyperParams) -> Result<NkrrModel> {
    let (x, y) = data.training();
    fit_xy(&x, &y, hp)
}

pub fn fit_xy(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &HyperParams) -> Result<NkrrModel> {
    if x.nrows() != y.nrows() {
        return dim_err("X and Y row counts differ");
    }
    let sys = NystromSystem::new(x, hp)?;
    Ok(NkrrModel { beta: sys.coefficients(y), hp: hp.clone() })
}

pub fn predict(model: &NkrrModel, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if xq.nrows() == 0 {
        return Err(NyError::InvalidArgument("no query points".into()));
    }
    let k = kernel_matrix(xq, &model.hp.z, &model.hp.ls)?;
    Ok(k * &model.beta)
}

/// `H V` without forming the n x n hat matrix.
pub fn hat_apply(data: &Dataset, hp: &HyperParams, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (x, _) = data.training();
    if v.nrows() != x.nrows() {
        return dim_err(format!("V has {} rows, training data {}", v.nrows(), x.nrows()));
    }
    let sys = NystromSystem::new(&x, hp)?;
    Ok(sys.fitted(v))
}

/// Dense check of `(K~ + n*lambda*I)^{-1} K~ = K_nm (K_nm^T K_nm + n*lambda*K_mm)^+ K_nm^T`
/// with `K~ = K_nm K_mm^+ K_nm^T`. Returns the largest entrywise deviation.
pub fn check_kernel_equivalence(data: &Dataset, hp: &HyperParams) -> Result<f64> {
    let (x, _) = data.training();
    let n = x.nrows();
    if n > 2000 {
        return Err(NyError::InvalidArgument(format!("dense check refused for n = {n}")));
    }
    let nl = n as f64 * hp.lambda();
    let knm = kernel_matrix(&x, &hp.z, &hp.ls)?;
    let kmm = kernel_matrix(&hp.z, &hp.z, &hp.ls)?;

    let ktilde = &knm * pinv_sym(&kmm, PINV_RCOND) * knm.transpose();
    let mut shifted = ktilde.clone();
    for i in 0..n {
        shifted[(i, i)] += nl;
    }
    let lhs = shifted.cholesky().ok_or(NyError::Singular { jitter: 0.0 })?.solve(&ktilde);

    let b = knm.tr_mul(&knm) + &kmm * nl;
    let rhs = &knm * pinv_sym(&b, PINV_RCOND) * knm.transpose();
    Ok((lhs - rhs).amax())
}

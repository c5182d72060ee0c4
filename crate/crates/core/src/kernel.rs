//! Gaussian kernel with one lengthscale per input dimension.
//!
//! `k(x, z) = exp(-0.5 * sum_j ((x_j - z_j) / ell_j)^2)`. Lengthscales are
//! stored in log-space so every hyperparameter is unconstrained.
//!
//! Point sets are `DMatrix<f64>` with one point per row. Everything here is
//! computed entry by entry with a fixed summation order, so results do not
//! depend on how rayon splits the work.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, NyError, Result};

/// Default number of rows per block in blocked kernel evaluations.
pub const DEFAULT_BLOCK_ROWS: usize = 4096;

/// Per-dimension lengthscales, held as `log(ell_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lengthscales {
    log_ell: Vec<f64>,
}

impl Lengthscales {
    pub fn from_log(log_ell: Vec<f64>) -> Result<Self> {
        if log_ell.is_empty() {
            return Err(NyError::InvalidArgument("lengthscales need d >= 1".into()));
        }
        if log_ell.iter().any(|v| !v.is_finite()) {
            return Err(NyError::InvalidArgument("non-finite log-lengthscale".into()));
        }
        Ok(Self { log_ell })
    }

    pub fn from_values(ell: &[f64]) -> Result<Self> {
        if ell.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(NyError::InvalidArgument("lengthscales must be positive and finite".into()));
        }
        Self::from_log(ell.iter().map(|v| v.ln()).collect())
    }

    /// Same lengthscale for all `d` dimensions.
    pub fn isotropic(ell: f64, d: usize) -> Result<Self> {
        Self::from_values(&vec![ell; d])
    }

    pub fn dim(&self) -> usize {
        self.log_ell.len()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_ell
    }

    pub fn log_values_mut(&mut self) -> &mut [f64] {
        &mut self.log_ell
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_ell.iter().map(|v| v.exp()).collect()
    }

    fn inverse(&self) -> Vec<f64> {
        self.log_ell.iter().map(|v| (-v).exp()).collect()
    }
}

/// Gradients of `s = sum_ij W_ij k(a_i, b_j)`.
#[derive(Debug, Clone)]
pub struct KernelGrad {
    pub log_ell: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Row-major copy of a point set so each point is contiguous.
struct Points {
    data: Vec<f64>,
    d: usize,
}

impl Points {
    fn new(m: &DMatrix<f64>) -> Self {
        let (n, d) = m.shape();
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                data[i * d + k] = m[(i, k)];
            }
        }
        Self { data, d }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    fn len(&self) -> usize {
        self.data.len().checked_div(self.d).unwrap_or(0)
    }
}

#[inline]
fn sq_dist_scaled(x: &[f64], z: &[f64], inv_ell: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        let t = (x[k] - z[k]) * inv_ell[k];
        s += t * t;
    }
    s
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, ls: &Lengthscales) -> Result<()> {
    if a.ncols() != ls.dim() || b.ncols() != ls.dim() {
        return dim_err(format!(
            "point sets have {} and {} columns, lengthscales have {}",
            a.ncols(),
            b.ncols(),
            ls.dim()
        ));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(NyError::InvalidArgument("empty point set".into()));
    }
    Ok(())
}

pub fn kernel_eval(x: &[f64], z: &[f64], ls: &Lengthscales) -> Result<f64> {
    if x.len() != z.len() || x.len() != ls.dim() {
        return dim_err(format!("kernel_eval: |x| = {}, |z| = {}, d = {}", x.len(), z.len(), ls.dim()));
    }
    Ok((-0.5 * sq_dist_scaled(x, z, &ls.inverse())).exp())
}

/// Dense kernel matrix `K(A, B)` (a x b).
pub fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, ls: &Lengthscales) -> Result<DMatrix<f64>> {
    check_dims(a, b, ls)?;
    let pa = Points::new(a);
    let pb = Points::new(b);
    let inv = ls.inverse();
    let rows = a.nrows();
    let mut out = DMatrix::<f64>::zeros(rows, b.nrows());
    // Column-major storage: parallelize over output columns.
    out.as_mut_slice().par_chunks_mut(rows).enumerate().for_each(|(j, col)| {
        let zj = pb.row(j);
        for (i, v) in col.iter_mut().enumerate() {
            *v = (-0.5 * sq_dist_scaled(pa.row(i), zj, &inv)).exp();
        }
    });
    Ok(out)
}

/// Diagonal `k(x_i, x_i)`; identically one for the Gaussian kernel.
pub fn kernel_diag(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_element(a.nrows(), 1.0)
}

/// Where the per-entry weights come from in a vector-Jacobian product.
enum Weights<'a> {
    Dense(&'a DMatrix<f64>),
    Factored(&'a DMatrix<f64>, &'a DMatrix<f64>),
}

impl Weights<'_> {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Weights::Dense(w) => w[(i, j)],
            Weights::Factored(l, r) => {
                let mut s = 0.0;
                for c in 0..l.ncols() {
                    s += l[(i, c)] * r[(j, c)];
                }
                s
            }
        }
    }
}

struct BlockPartial {
    start: usize,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
    grad_ell: Vec<f64>,
}

fn vjp_impl(a: &DMatrix<f64>, b: &DMatrix<f64>, ls: &Lengthscales, w: Weights<'_>, block_rows: usize) -> KernelGrad {
    let d = ls.dim();
    let pa = Points::new(a);
    let pb = Points::new(b);
    let inv = ls.inverse();
    let na = pa.len();
    let nb = pb.len();
    let block = block_rows.max(1);
    let starts: Vec<usize> = (0..na).step_by(block).collect();

    let partials: Vec<BlockPartial> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + block).min(na);
            let mut grad_a = vec![0.0; (end - start) * d];
            let mut grad_b = vec![0.0; nb * d];
            let mut grad_ell = vec![0.0; d];
            let mut delta = vec![0.0; d];
            for i in start..end {
                let xi = pa.row(i);
                let ga = &mut grad_a[(i - start) * d..(i - start + 1) * d];
                for j in 0..nb {
                    let wij = w.get(i, j);
                    if wij == 0.0 {
                        continue;
                    }
                    let zj = pb.row(j);
                    let mut s = 0.0;
                    for k in 0..d {
                        let t = (xi[k] - zj[k]) * inv[k];
                        delta[k] = t;
                        s += t * t;
                    }
                    let p = wij * (-0.5 * s).exp();
                    let gb = &mut grad_b[j * d..(j + 1) * d];
                    for k in 0..d {
                        let g = p * delta[k] * inv[k];
                        ga[k] -= g;
                        gb[k] += g;
                        grad_ell[k] += p * delta[k] * delta[k];
                    }
                }
            }
            BlockPartial { start, grad_a, grad_b, grad_ell }
        })
        .collect();

    // Reduce in block order so the result is independent of thread count.
    let mut ga = DMatrix::<f64>::zeros(na, d);
    let mut gb = DMatrix::<f64>::zeros(nb, d);
    let mut gl = DVector::<f64>::zeros(d);
    for part in &partials {
        let rows = part.grad_a.len() / d.max(1);
        for r in 0..rows {
            for k in 0..d {
                ga[(part.start + r, k)] = part.grad_a[r * d + k];
            }
        }
        for j in 0..nb {
            for k in 0..d {
                gb[(j, k)] += part.grad_b[j * d + k];
            }
        }
        for k in 0..d {
            gl[k] += part.grad_ell[k];
        }
    }
    KernelGrad { log_ell: gl, a: ga, b: gb }
}

/// Gradients of `s = tr(L^T K(A, B) R)` with respect to the log-lengthscales
/// and both point sets. Never forms anything larger than one row block.
pub fn kernel_vjp(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ls: &Lengthscales,
    l: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<KernelGrad> {
    kernel_vjp_blocked(a, b, ls, l, r, DEFAULT_BLOCK_ROWS)
}

pub fn kernel_vjp_blocked(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ls: &Lengthscales,
    l: &DMatrix<f64>,
    r: &DMatrix<f64>,
    block_rows: usize,
) -> Result<KernelGrad> {
    check_dims(a, b, ls)?;
    if l.nrows() != a.nrows() || r.nrows() != b.nrows() || l.ncols() != r.ncols() {
        return dim_err(format!(
            "cotangents {}x{} and {}x{} do not fit a {}x{} kernel",
            l.nrows(),
            l.ncols(),
            r.nrows(),
            r.ncols(),
            a.nrows(),
            b.nrows()
        ));
    }
    Ok(vjp_impl(a, b, ls, Weights::Factored(l, r), block_rows))
}

/// Gradients of `s = sum_ij W_ij k(a_i, b_j)` for an explicit weight matrix.
pub fn kernel_vjp_weighted(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ls: &Lengthscales,
    w: &DMatrix<f64>,
) -> Result<KernelGrad> {
    check_dims(a, b, ls)?;
    if w.shape() != (a.nrows(), b.nrows()) {
        return dim_err(format!("weights are {}x{}, kernel is {}x{}", w.nrows(), w.ncols(), a.nrows(), b.nrows()));
    }
    Ok(vjp_impl(a, b, ls, Weights::Dense(w), DEFAULT_BLOCK_ROWS))
}

//! Dense factorization helpers shared by the solver and the objectives.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{NyError, Result};

/// Relative jitter added to every kernel-matrix factorization.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;
/// Relative eigenvalue cutoff for Moore-Penrose inverses.
pub const PINV_RCOND: f64 = 1e-10;

/// A Cholesky factor of `A + jitter * I`.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
    l: DMatrix<f64>,
}

impl JitteredCholesky {
    fn new(factor: Cholesky<f64, Dyn>, jitter: f64) -> Self {
        let l = factor.l();
        Self { factor, jitter, l }
    }

    /// The lower-triangular factor (upper part zeroed).
    pub fn l_ref(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(rhs)
    }

    pub fn log_det(&self) -> f64 {
        let l = self.factor.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `L^{-1} rhs`.
    pub fn solve_lower(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = rhs.clone();
        self.factor.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    /// `L^{-T} rhs`.
    pub fn solve_upper(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = rhs.clone();
        self.factor.l_dirty().tr_solve_lower_triangular_mut(&mut x);
        x
    }
}

fn mean_diag(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows().max(1);
    let s: f64 = (0..a.nrows()).map(|i| a[(i, i)].abs()).sum();
    let m = s / n as f64;
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn try_factor(a: &DMatrix<f64>, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut shifted = a.clone();
    if jitter > 0.0 {
        for i in 0..a.nrows() {
            shifted[(i, i)] += jitter;
        }
    }
    let chol = Cholesky::new(shifted)?;
    let l = chol.l_dirty();
    if (0..l.nrows()).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0) {
        Some(chol)
    } else {
        None
    }
}

/// Factor a symmetric PSD matrix, always adding `1e-10 * mean(diag)` and
/// escalating by x10 up to `1e-4 * mean(diag)`.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<JitteredCholesky> {
    ladder(a, false)
}

/// Factor a matrix that is positive definite in exact arithmetic. Tries no
/// jitter first, then the same ladder as [`cholesky_jittered`].
pub fn cholesky_pd(a: &DMatrix<f64>) -> Result<JitteredCholesky> {
    ladder(a, true)
}

fn ladder(a: &DMatrix<f64>, try_plain: bool) -> Result<JitteredCholesky> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(NyError::Numerical {
            term: "factorization".into(),
            detail: "matrix has non-finite entries".into(),
        });
    }
    if try_plain {
        if let Some(factor) = try_factor(a, 0.0) {
            return Ok(JitteredCholesky::new(factor, 0.0));
        }
    }
    let scale = mean_diag(a);
    let mut rel = JITTER_START;
    let mut last = 0.0;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        last = jitter;
        if let Some(factor) = try_factor(a, jitter) {
            if rel > JITTER_START {
                log::debug!("cholesky needed relative jitter {rel:e}");
            }
            return Ok(JitteredCholesky::new(factor, jitter));
        }
        rel *= 10.0;
    }
    Err(NyError::Singular { jitter: last })
}

/// Moore-Penrose inverse of a symmetric matrix via eigendecomposition,
/// dropping eigenvalues below `rcond * max|eigenvalue|`.
pub fn pinv_sym(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cut = rcond * max;
    let n = a.nrows();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev.abs() > cut && ev.abs() > 0.0 {
            let u = eig.eigenvectors.column(k);
            out.ger(1.0 / ev, &u, &u, 1.0);
        }
    }
    out
}

pub fn trace(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// `sum_ij a_ij * b_ij`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_starts_at_base_level() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let c = cholesky_jittered(&a).unwrap();
        assert!((c.jitter - 2e-10).abs() < 1e-24);
        let c = cholesky_pd(&a).unwrap();
        assert_eq!(c.jitter, 0.0);
    }

    #[test]
    fn singular_psd_matrix_factors_with_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = cholesky_jittered(&a).unwrap();
        assert!(c.jitter > 0.0);
    }

    #[test]
    fn indefinite_matrix_reports_final_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match cholesky_jittered(&a) {
            Err(NyError::Singular { jitter }) => assert!((jitter - 1e-4).abs() < 1e-12),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn pinv_of_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv_sym(&a, PINV_RCOND);
        let expect = DMatrix::from_element(2, 2, 0.25);
        assert!((p - expect).amax() < 1e-12);
    }
}

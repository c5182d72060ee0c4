//! Dense reference computations and random instance generators shared by
//! the nytune test suites. Everything here assembles n x n matrices and is
//! only meant for small problems.

use nalgebra::{DMatrix, SymmetricEigen};
use nytune::{kernel_matrix, HyperParams, Lengthscales};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use nytune::data::Dataset;

/// Relative cutoff for pseudo-inverses.
pub const RCOND: f64 = 1e-10;

/// Moore-Penrose inverse of a symmetric matrix, eigenvalues below
/// `rcond * max|eigenvalue|` treated as zero.
pub fn pinv(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let cut = rcond * eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev.abs() > cut {
            let u = eig.eigenvectors.column(k);
            out += u * u.transpose() / ev;
        }
    }
    out
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// `max |a - b| / max(max |b|, 1)` over all entries.
pub fn rel_max_dev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn knm(x: &DMatrix<f64>, hp: &HyperParams) -> DMatrix<f64> {
    kernel_matrix(x, &hp.z, &hp.ls).unwrap()
}

pub fn kmm(hp: &HyperParams) -> DMatrix<f64> {
    kernel_matrix(&hp.z, &hp.z, &hp.ls).unwrap()
}

fn n_lambda(x: &DMatrix<f64>, hp: &HyperParams) -> f64 {
    x.nrows() as f64 * hp.lambda()
}

fn shifted(k: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    let mut out = k.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += s;
    }
    out
}

/// `K~ = K_nm K_mm^+ K_nm^T`.
pub fn ktilde(x: &DMatrix<f64>, hp: &HyperParams) -> DMatrix<f64> {
    let k = knm(x, hp);
    &k * pinv(&kmm(hp), RCOND) * k.transpose()
}

/// `B = K_nm^T K_nm + n lambda K_mm`.
pub fn normal_matrix(x: &DMatrix<f64>, hp: &HyperParams) -> DMatrix<f64> {
    let k = knm(x, hp);
    k.tr_mul(&k) + kmm(hp) * n_lambda(x, hp)
}

/// Coefficients `B^+ K_nm^T Y`.
pub fn beta(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &HyperParams) -> DMatrix<f64> {
    pinv(&normal_matrix(x, hp), RCOND) * knm(x, hp).tr_mul(y)
}

/// Dense hat matrix `K_nm B^+ K_nm^T`.
pub fn hat(x: &DMatrix<f64>, hp: &HyperParams) -> DMatrix<f64> {
    let k = knm(x, hp);
    &k * pinv(&normal_matrix(x, hp), RCOND) * k.transpose()
}

/// `(K~ + n lambda I)^{-1} M` by dense Cholesky.
pub fn resolvent_apply(x: &DMatrix<f64>, hp: &HyperParams, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    shifted(&ktilde(x, hp), n_lambda(x, hp)).cholesky().expect("K~ + n lambda I is PD").solve(rhs)
}

/// `tr((K~ + n lambda I)^{-1} K~)`.
pub fn effective_dimension(x: &DMatrix<f64>, hp: &HyperParams) -> f64 {
    resolvent_apply(x, hp, &ktilde(x, hp)).trace()
}

/// `tr(K) - tr(K~)` with the unit kernel diagonal.
pub fn trace_gap(x: &DMatrix<f64>, hp: &HyperParams) -> f64 {
    x.nrows() as f64 - ktilde(x, hp).trace()
}

/// Orthonormal coordinates of the feature-space projection onto
/// `span{k(., z_j)}`: row `i` holds the coordinates of `P k(., x_i)`.
pub fn projected_features(x: &DMatrix<f64>, hp: &HyperParams) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(kmm(hp));
    let cut = RCOND * eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&k| eig.eigenvalues[k] > cut).collect();
    let mut basis = DMatrix::zeros(hp.m(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &(eig.eigenvectors.column(k) / eig.eigenvalues[k].sqrt()));
    }
    knm(x, hp) * basis
}

/// `tr((I - P) Sigma)` for the unnormalized empirical covariance operator,
/// computed as `sum_i (|k(., x_i)|^2 - |P k(., x_i)|^2)`.
pub fn projected_residual_trace(x: &DMatrix<f64>, hp: &HyperParams) -> f64 {
    x.nrows() as f64 - projected_features(x, hp).norm_squared()
}

/// Predictions of the estimator written as ridge regression on the projected
/// features, evaluated at `xq`.
pub fn projected_form_predict(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &HyperParams, xq: &DMatrix<f64>) -> DMatrix<f64> {
    let phi = projected_features(x, hp);
    let r = phi.ncols();
    let w = shifted(&phi.tr_mul(&phi), n_lambda(x, hp)).cholesky().expect("ridge system is PD").solve(&phi.tr_mul(y));
    debug_assert_eq!(w.nrows(), r);
    projected_features(xq, hp) * w
}

/// `Y^T (K~ + n lambda I)^{-1} Y`.
pub fn quadratic_form(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &HyperParams) -> f64 {
    y.dot(&resolvent_apply(x, hp, y))
}

/// `logdet(K~ + n lambda I) + Y^T (K~ + n lambda I)^{-1} Y + tr(K - K~) / (n lambda)`.
pub fn sgpr(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &HyperParams) -> f64 {
    let c = shifted(&ktilde(x, hp), n_lambda(x, hp)).cholesky().unwrap();
    let logdet = 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    logdet + y.dot(&c.solve(y)) + trace_gap(x, hp) / n_lambda(x, hp)
}

/// Generalized cross-validation from the dense hat matrix.
pub fn gcv(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &HyperParams) -> f64 {
    let n = x.nrows() as f64;
    let h = hat(x, hp);
    let r = y - &h * y;
    let denom = (n - h.trace()) / n;
    r.norm_squared() / n / (denom * denom)
}

/// Leave-one-out error by refitting without each point in turn. The refit
/// keeps the total penalty `n lambda ||f||^2` fixed, so its per-sample
/// regularizer is `lambda n / (n - 1)`.
pub fn loocv_refit(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &HyperParams) -> f64 {
    let n = x.nrows();
    let lambda = hp.lambda() * n as f64 / (n - 1) as f64;
    let hp_loo = HyperParams::new(lambda, hp.ls.clone(), hp.z.clone()).unwrap();
    let mut total = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
        let xs = x.select_rows(&keep);
        let ys = y.select_rows(&keep);
        let model = nytune::nystrom::fit_xy(&xs, &ys, &hp_loo).unwrap();
        let pred = nytune::predict(&model, &x.rows(i, 1).clone_owned()).unwrap();
        total += (y.row(i) - pred.row(0)).norm_squared();
    }
    total / n as f64
}

/// Mean and standard error of a sample.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub n: (usize, usize),
    pub m: (usize, usize),
    pub d: (usize, usize),
    pub log10_lambda: (f64, f64),
    pub ell: (f64, f64),
    /// Number of inducing points replaced by copies of other inducing points.
    pub duplicates: usize,
    /// Smallest allowed eigenvalue of `K_mm` after removing the copies.
    pub min_eig: f64,
    /// When set, the dataset carries a train/validation split.
    pub val_frac: Option<f64>,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            n: (20, 60),
            m: (3, 8),
            d: (2, 3),
            log10_lambda: (-4.0, -1.0),
            ell: (0.7, 2.0),
            duplicates: 0,
            min_eig: 1e-2,
            val_frac: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub data: Dataset,
    pub hp: HyperParams,
    pub seed: u64,
}

impl Instance {
    pub fn x(&self) -> &DMatrix<f64> {
        &self.data.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.data.y
    }
}

fn inclusive(rng: &mut ChaCha8Rng, r: (usize, usize)) -> usize {
    rng.random_range(r.0..=r.1)
}

/// Random regression instance with inducing points drawn independently of
/// the inputs. Inducing sets whose Gram matrix (copies removed) has an
/// eigenvalue below `spec.min_eig` are redrawn.
pub fn instance(spec: &InstanceSpec, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = inclusive(&mut rng, spec.n);
    let d = inclusive(&mut rng, spec.d);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = DMatrix::from_fn(n, 1, |i, _| {
        let s: f64 = x.row(i).iter().sum();
        s.sin() + 0.5 * x[(i, 0)].cos() + 0.3 * rng.random_range(-1.0..1.0)
    });
    let lambda = 10f64.powf(rng.random_range(spec.log10_lambda.0..=spec.log10_lambda.1));
    for _ in 0..1000 {
        let m = inclusive(&mut rng, spec.m).max(spec.duplicates + 1);
        let ell: Vec<f64> = (0..d).map(|_| rng.random_range(spec.ell.0..=spec.ell.1)).collect();
        let ls = Lengthscales::from_values(&ell).unwrap();
        let unique = m - spec.duplicates;
        let zu = DMatrix::from_fn(unique, d, |_, _| rng.random_range(-2.0..2.0));
        if min_eigenvalue(&kernel_matrix(&zu, &zu, &ls).unwrap()) < spec.min_eig {
            continue;
        }
        let mut z = DMatrix::zeros(m, d);
        z.rows_mut(0, unique).copy_from(&zu);
        for k in unique..m {
            let src = rng.random_range(0..unique);
            z.set_row(k, &zu.row(src));
        }
        let hp = HyperParams::new(lambda, ls, z).unwrap();
        let mut data = Dataset::new(x, y).unwrap();
        if let Some(f) = spec.val_frac {
            data = data.with_validation_fraction(f, seed).unwrap();
        }
        return Instance { data, hp, seed };
    }
    panic!("no well-conditioned inducing set found for seed {seed}");
}

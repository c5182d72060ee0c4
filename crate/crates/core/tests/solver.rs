use nalgebra::{DMatrix, SymmetricEigen};
use nytune::nystrom::{check_kernel_equivalence, fit_xy};
use nytune::{fit, hat_apply, kernel_eval, kernel_matrix, predict, Dataset, HyperParams, Lengthscales};
use nytune_testkit as tk;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(n: usize, m: usize) -> tk::InstanceSpec {
    tk::InstanceSpec { n: (n, n), m: (m, m), ..Default::default() }
}

fn regularized_risk(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &HyperParams, beta: &DMatrix<f64>) -> f64 {
    let knm = tk::knm(x, hp);
    let r = &knm * beta - y;
    let norm = (beta.transpose() * tk::kmm(hp) * beta).trace();
    r.norm_squared() / x.nrows() as f64 + hp.lambda() * norm
}

#[test]
fn beta_matches_pseudo_inverse_oracle() {
    for seed in 0..5 {
        let inst = tk::instance(&spec(30, 5), seed);
        let model = fit(&inst.data, &inst.hp).unwrap();
        let oracle = tk::beta(inst.x(), inst.y(), &inst.hp);
        let dev = (&model.beta - &oracle).amax();
        assert!(dev <= 1e-7, "seed {seed}: {dev:e}");
    }
}

#[test]
fn normal_equation_residual_is_small() {
    for seed in 0..5 {
        let inst = tk::instance(&spec(40, 7), seed);
        let model = fit(&inst.data, &inst.hp).unwrap();
        let knm = tk::knm(inst.x(), &inst.hp);
        let rhs = knm.tr_mul(inst.y());
        let res = tk::normal_matrix(inst.x(), &inst.hp) * &model.beta - &rhs;
        assert!(res.norm() <= 1e-8 * rhs.norm(), "seed {seed}: {:e}", res.norm() / rhs.norm());
    }
}

#[test]
fn large_lambda_shrinks_predictions() {
    let inst = tk::instance(&spec(25, 5), 3);
    let x = inst.x().clone();
    let hp = HyperParams::new(1e6, inst.hp.ls.clone(), x.clone()).unwrap();
    let model = fit(&inst.data, &hp).unwrap();
    let f = predict(&model, &x).unwrap();
    let k = kernel_matrix(&x, &x, &hp.ls).unwrap();
    let top = SymmetricEigen::new(k).eigenvalues.max();
    let bound = inst.y().norm() * top / (x.nrows() as f64 * hp.lambda());
    assert!(f.norm() <= bound, "{} > {bound}", f.norm());
}

#[test]
fn predictions_match_summation_oracle() {
    let inst = tk::instance(&spec(30, 6), 4);
    let model = fit(&inst.data, &inst.hp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xq = DMatrix::from_fn(9, inst.hp.d(), |_, _| rng.random_range(-3.0..3.0));
    let p = predict(&model, &xq).unwrap();
    for q in 0..xq.nrows() {
        let mut s = 0.0;
        for j in 0..inst.hp.m() {
            let xr: Vec<f64> = xq.row(q).iter().copied().collect();
            let zr: Vec<f64> = inst.hp.z.row(j).iter().copied().collect();
            s += model.beta[(j, 0)] * kernel_eval(&xr, &zr, &inst.hp.ls).unwrap();
        }
        assert!((p[(q, 0)] - s).abs() <= 1e-12);
    }
}

#[test]
fn predict_dimension_mismatch_is_an_error() {
    let inst = tk::instance(&spec(20, 4), 5);
    let model = fit(&inst.data, &inst.hp).unwrap();
    assert!(predict(&model, &DMatrix::zeros(3, inst.hp.d() + 1)).is_err());
}

#[test]
fn hat_apply_examples() {
    for seed in 0..5 {
        let inst = tk::instance(&spec(25, 6), seed);
        let n = inst.data.n();
        assert_eq!(hat_apply(&inst.data, &inst.hp, &DMatrix::zeros(n, 2)).unwrap(), DMatrix::zeros(n, 2));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let h = tk::hat(inst.x(), &inst.hp);
        let dev = (hat_apply(&inst.data, &inst.hp, &v).unwrap() - &h * &v).amax();
        assert!(dev <= 1e-8, "seed {seed}: {dev:e}");

        let eig = SymmetricEigen::new(h).eigenvalues;
        assert!(eig.min() >= -1e-8 && eig.max() <= 1.0 + 1e-8, "seed {seed}: [{}, {}]", eig.min(), eig.max());
    }
}

#[test]
fn hat_apply_equals_fit_then_predict() {
    let inst = tk::instance(&spec(35, 6), 9);
    let hy = hat_apply(&inst.data, &inst.hp, inst.y()).unwrap();
    let f = predict(&fit(&inst.data, &inst.hp).unwrap(), inst.x()).unwrap();
    assert!((hy - f).amax() <= 1e-12);
}

#[test]
fn kernel_equivalence_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-2.0..2.0));
    let data = Dataset::new(x.clone(), DMatrix::zeros(20, 1)).unwrap();
    let ls = Lengthscales::isotropic(1.0, 2).unwrap();

    let full = HyperParams::new(1e-3, ls.clone(), x.clone()).unwrap();
    assert!(check_kernel_equivalence(&data, &full).unwrap() <= 1e-6);

    let mut z = x.rows(0, 6).clone_owned();
    let r = z.row(2).clone_owned();
    z.set_row(4, &r);
    let dup = HyperParams::new(1e-2, ls.clone(), z.clone()).unwrap();
    assert!(check_kernel_equivalence(&data, &dup).unwrap() <= 1e-5);

    // Both sides approach K~ / (n lambda) for dominant lambda.
    let big = HyperParams::new(1e4, ls, z).unwrap();
    assert!(check_kernel_equivalence(&data, &big).unwrap() <= 1e-8);
    let kt = tk::ktilde(&x, &big);
    let lhs = tk::resolvent_apply(&x, &big, &kt);
    let limit = kt / (20.0 * 1e4);
    assert!((lhs - limit).amax() <= 1e-8);
}

#[test]
fn duplicated_inducing_points_do_not_change_the_fit() {
    let inst = tk::instance(&spec(30, 5), 12);
    let mut z = DMatrix::zeros(6, inst.hp.d());
    z.rows_mut(0, 5).copy_from(&inst.hp.z);
    z.set_row(5, &inst.hp.z.row(1));
    let dup = HyperParams::new(inst.hp.lambda(), inst.hp.ls.clone(), z).unwrap();
    let a = predict(&fit(&inst.data, &inst.hp).unwrap(), inst.x()).unwrap();
    let b = predict(&fit(&inst.data, &dup).unwrap(), inst.x()).unwrap();
    assert!((a - b).amax() <= 1e-8);
}

#[test]
fn fitted_coefficients_are_a_local_minimum() {
    for seed in 0..5 {
        let inst = tk::instance(&spec(30, 5), seed);
        let model = fit(&inst.data, &inst.hp).unwrap();
        let base = regularized_risk(inst.x(), inst.y(), &inst.hp, &model.beta);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for _ in 0..5 {
            let delta = DMatrix::from_fn(inst.hp.m(), 1, |_, _| rng.random_range(-1.0..1.0));
            for eps in [1e-3, -1e-3] {
                let moved = regularized_risk(inst.x(), inst.y(), &inst.hp, &(&model.beta + &delta * eps));
                assert!(moved > base, "seed {seed}: {moved} <= {base}");
            }
        }
    }
}

#[test]
fn projected_operator_form_gives_the_same_predictions() {
    let s = tk::InstanceSpec { n: (20, 100), m: (2, 20), d: (2, 4), ..Default::default() };
    for seed in 0..10 {
        let inst = tk::instance(&s, seed);
        let model = fit(&inst.data, &inst.hp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xq = DMatrix::from_fn(15, inst.hp.d(), |_, _| rng.random_range(-2.0..2.0));
        let ours = predict(&model, &xq).unwrap();
        let oracle = tk::projected_form_predict(inst.x(), inst.y(), &inst.hp, &xq);
        assert!((ours - oracle).amax() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn multi_output_fit_is_columnwise() {
    let inst = tk::instance(&spec(30, 5), 14);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let y2 = DMatrix::from_fn(30, 2, |i, c| if c == 0 { inst.y()[(i, 0)] } else { rng.random_range(-1.0..1.0) });
    let both = fit_xy(inst.x(), &y2, &inst.hp).unwrap();
    let first = fit_xy(inst.x(), &y2.columns(0, 1).clone_owned(), &inst.hp).unwrap();
    assert!((both.beta.column(0) - first.beta.column(0)).amax() <= 1e-12);
}

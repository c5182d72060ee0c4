use nalgebra::DMatrix;
use nytune::data::{load_dataset, metric, preprocess, write_delimited, write_sparse, Format, Schema, SplitSpec, Task};
use nytune::kernel::kernel_vjp;
use nytune::objectives::{effective_dimension, evaluate, trace_gap};
use nytune::{kernel_matrix, Dataset, HyperParams, Lengthscales, MetricKind, ObjectiveConfig, ObjectiveId};
use nytune_testkit as tk;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn points(max_rows: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_rows).prop_flat_map(move |r| matrix(r, d, -3.0, 3.0))
}

fn lengthscales(d: usize) -> impl Strategy<Value = Lengthscales> {
    prop::collection::vec(-1.0f64..1.0, d).prop_map(|v| Lengthscales::from_log(v).unwrap())
}

fn forward(a: &DMatrix<f64>, b: &DMatrix<f64>, ls: &Lengthscales, l: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    (l.transpose() * kernel_matrix(a, b, ls).unwrap() * r).trace()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_kernel_is_symmetric_psd((a, ls) in (1usize..4).prop_flat_map(|d| (points(12, d), lengthscales(d)))) {
        let k = kernel_matrix(&a, &a, &ls).unwrap();
        prop_assert_eq!(&k, &k.transpose());
        prop_assert!(k.iter().all(|&v| v > 0.0 && v <= 1.0));
        prop_assert!(tk::min_eigenvalue(&k) >= -1e-8 * a.nrows() as f64);
    }

    #[test]
    fn longer_lengthscales_raise_off_diagonal_entries(
        (a, ls) in (1usize..4).prop_flat_map(|d| (points(8, d), lengthscales(d))),
        bump in 0.01f64..1.0,
    ) {
        let k0 = kernel_matrix(&a, &a, &ls).unwrap();
        let longer = Lengthscales::from_log(ls.log_values().iter().map(|v| v + bump).collect()).unwrap();
        let k1 = kernel_matrix(&a, &a, &longer).unwrap();
        for i in 0..a.nrows() {
            for j in 0..a.nrows() {
                if i != j && a.row(i) != a.row(j) && k0[(i, j)] > 1e-300 {
                    prop_assert!(k1[(i, j)] > k0[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn kernel_vjp_matches_finite_differences(
        (a, b, ls, l, r) in (1usize..4).prop_flat_map(|d| (
            matrix(4, d, -1.5, 1.5), matrix(3, d, -1.5, 1.5), lengthscales(d),
            matrix(4, 2, -1.0, 1.0), matrix(3, 2, -1.0, 1.0),
        )),
    ) {
        let g = kernel_vjp(&a, &b, &ls, &l, &r).unwrap();
        let h = 1e-5;
        let check = |analytic: f64, fp: f64, fm: f64| {
            let numeric = (fp - fm) / (2.0 * h);
            (analytic - numeric).abs() <= 1e-5 * analytic.abs().max(numeric.abs()).max(1e-3)
        };
        for k in 0..ls.dim() {
            let mut p = ls.log_values().to_vec();
            p[k] += h;
            let mut m = ls.log_values().to_vec();
            m[k] -= h;
            let fp = forward(&a, &b, &Lengthscales::from_log(p).unwrap(), &l, &r);
            let fm = forward(&a, &b, &Lengthscales::from_log(m).unwrap(), &l, &r);
            prop_assert!(check(g.log_ell[k], fp, fm), "log_ell[{}]", k);
        }
        for idx in 0..a.len() {
            let (mut ap, mut am) = (a.clone(), a.clone());
            ap[idx] += h;
            am[idx] -= h;
            prop_assert!(check(g.a[idx], forward(&ap, &b, &ls, &l, &r), forward(&am, &b, &ls, &l, &r)), "a[{}]", idx);
        }
        for idx in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[idx] += h;
            bm[idx] -= h;
            prop_assert!(check(g.b[idx], forward(&a, &bp, &ls, &l, &r), forward(&a, &bm, &ls, &l, &r)), "b[{}]", idx);
        }
    }

    #[test]
    fn kernel_vjp_is_translation_invariant(
        (a, b, ls, l, r) in (1usize..4).prop_flat_map(|d| (
            matrix(5, d, -2.0, 2.0), matrix(4, d, -2.0, 2.0), lengthscales(d),
            matrix(5, 1, -1.0, 1.0), matrix(4, 1, -1.0, 1.0),
        )),
        shift in -5.0f64..5.0,
    ) {
        let g = kernel_vjp(&a.add_scalar(shift), &b.add_scalar(shift), &ls, &l, &r).unwrap();
        for k in 0..a.ncols() {
            let total = g.a.column(k).sum() + g.b.column(k).sum();
            prop_assert!(total.abs() <= 1e-10, "dimension {}: {}", k, total);
        }
    }

    #[test]
    fn effective_dimension_and_trace_gap_bounds(seed in 0u64..10_000) {
        let s = tk::InstanceSpec { duplicates: (seed % 2) as usize, ..Default::default() };
        let inst = tk::instance(&s, seed);
        let deff = effective_dimension(&inst.data, &inst.hp).unwrap();
        let cap = inst.hp.m().min(inst.data.n()) as f64;
        prop_assert!((0.0..=cap).contains(&deff));
        prop_assert!(trace_gap(&inst.data, &inst.hp).unwrap() >= -1e-8 * inst.data.n() as f64);
    }

    #[test]
    fn effective_dimension_decreases_in_lambda(seed in 0u64..10_000) {
        let inst = tk::instance(&tk::InstanceSpec::default(), seed);
        let mut prev = f64::INFINITY;
        for e in -6..=0 {
            let hp = HyperParams::new(10f64.powi(e), inst.hp.ls.clone(), inst.hp.z.clone()).unwrap();
            let v = effective_dimension(&inst.data, &hp).unwrap();
            prop_assert!(v < prev, "lambda 1e{}: {} !< {}", e, v, prev);
            prev = v;
        }
    }

    #[test]
    fn reports_are_finite_and_recombine(seed in 0u64..10_000, sigma2 in 0.0f64..2.0, one in any::<bool>()) {
        let s = tk::InstanceSpec { val_frac: Some(0.4), duplicates: (seed % 3 == 0) as usize, ..Default::default() };
        let inst = tk::instance(&s, seed);
        let cfg = ObjectiveConfig { sigma2, prop_reg_factor: if one { 1.0 } else { 2.0 }, ..Default::default() };
        for id in ObjectiveId::ALL {
            let rep = evaluate(id, &inst.data, &inst.hp, cfg).unwrap();
            prop_assert!(rep.value.is_finite());
            prop_assert!(tk::rel_err(rep.recombine(), rep.value) <= 1e-10 || rep.value == 0.0);
        }
    }

    #[test]
    fn splits_are_reproducible_and_disjoint(n in 2usize..200, test in 0.0f64..0.9, val in 0.0f64..0.9, seed in any::<u64>()) {
        let ds = Dataset::new(DMatrix::from_fn(n, 1, |i, _| i as f64), DMatrix::from_fn(n, 1, |i, _| (i % 3) as f64)).unwrap();
        let spec = SplitSpec::Fraction { test, val };
        let a = preprocess(&ds, Task::Regression, seed, &spec);
        let b = preprocess(&ds, Task::Regression, seed, &spec);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let s = a.split.clone().unwrap();
                prop_assert_eq!(Some(&s), b.split.as_ref());
                let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "non-deterministic outcome"),
        }
    }

    #[test]
    fn preprocessing_is_idempotent(x in matrix(30, 3, -10.0, 10.0), y in matrix(30, 1, -5.0, 5.0), seed in any::<u64>()) {
        let ds = Dataset::new(x, y).unwrap();
        let spec = SplitSpec::Fraction { test: 0.3, val: 0.0 };
        let once = preprocess(&ds, Task::Regression, seed, &spec).unwrap();
        let twice = preprocess(&once, Task::Regression, seed, &SplitSpec::Keep).unwrap();
        prop_assert!((&once.x - &twice.x).amax() <= 1e-10);
        prop_assert!((&once.y - &twice.y).amax() <= 1e-10);
        let train = &once.split.as_ref().unwrap().train;
        for c in 0..once.d() {
            let col: Vec<f64> = train.iter().map(|&i| once.x[(i, c)]).collect();
            let (mean, _) = tk::mean_se(&col);
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() <= 1e-8 && (var.sqrt() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn cerror_is_invariant_to_relabeling(pred in matrix(20, 1, -1.0, 1.0), signs in prop::collection::vec(any::<bool>(), 20)) {
        let target = DMatrix::from_fn(20, 1, |i, _| if signs[i] { 1.0 } else { -1.0 });
        let a = metric(MetricKind::CError, &pred, &target).unwrap().value;
        let b = metric(MetricKind::CError, &(-&pred), &(-&target)).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn delimited_round_trip(x in matrix(7, 3, -1e3, 1e3), y in matrix(7, 1, -1e3, 1e3)) {
        let ds = Dataset::new(x, y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_delimited(&ds, &path).unwrap();
        let back = load_dataset(&path, Format::Delimited, &Schema::default()).unwrap();
        prop_assert!((&back.x - &ds.x).amax() <= 1e-12 && (&back.y - &ds.y).amax() <= 1e-12);
    }

    #[test]
    fn sparse_round_trip(x in matrix(6, 4, -5.0, 5.0), y in matrix(6, 1, -5.0, 5.0), mask in prop::collection::vec(any::<bool>(), 24)) {
        let x = DMatrix::from_fn(6, 4, |i, j| if mask[i * 4 + j] { x[(i, j)] } else { 0.0 });
        let ds = Dataset::new(x, y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.svm");
        write_sparse(&ds, &path).unwrap();
        let schema = Schema { n_features: Some(4), ..Default::default() };
        let back = load_dataset(&path, Format::SparseIndexValue, &schema).unwrap();
        prop_assert_eq!(back.x, ds.x);
        prop_assert_eq!(back.y, ds.y);
    }
}

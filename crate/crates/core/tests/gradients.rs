use nalgebra::DMatrix;
use nytune::grad::{evaluate_problem, grad_problem};
use nytune::{
    grad_check, grad_objective, make_probes, Dataset, HyperParams, ObjectiveConfig, ObjectiveId, ProbeKind, Problem,
    SteScope,
};
use nytune_testkit as tk;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn spec(duplicates: usize) -> tk::InstanceSpec {
    tk::InstanceSpec { n: (30, 60), m: (3, 8), d: (1, 3), duplicates, val_frac: Some(0.4), ..Default::default() }
}

fn cfg() -> ObjectiveConfig {
    ObjectiveConfig { sigma2: 0.5, prop_reg_factor: 2.0, ..Default::default() }
}

#[test]
fn every_objective_matches_finite_differences() {
    for seed in 0..6 {
        for dup in [0, 1] {
            let inst = tk::instance(&spec(dup), seed);
            for id in ObjectiveId::ALL {
                let rep = grad_check(id, &inst.data, &inst.hp, cfg(), None, STEP, TOL).unwrap();
                let w = rep.worst().unwrap();
                assert!(rep.passed, "{id} seed {seed} dup {dup}: {:e} at {}", rep.max_rel_err, w.name);
            }
        }
    }
}

#[test]
fn stochastic_prop_matches_finite_differences_with_fixed_probes() {
    for seed in 0..4 {
        for dup in [0, 1] {
            let inst = tk::instance(&spec(dup), seed);
            let probes = make_probes(inst.data.n(), 20, ProbeKind::Gaussian, seed).unwrap();
            let rep = grad_check(ObjectiveId::Prop, &inst.data, &inst.hp, cfg(), Some(&probes), STEP, TOL).unwrap();
            assert!(rep.passed, "seed {seed} dup {dup}: {:e}", rep.max_rel_err);
        }
    }
}

#[test]
fn stochastic_effective_dimension_only_matches_finite_differences() {
    let scoped = ObjectiveConfig { ste_scope: SteScope::EffectiveDimension, ..cfg() };
    for seed in 0..3 {
        let inst = tk::instance(&spec(1), seed);
        let probes = make_probes(inst.data.n(), 10, ProbeKind::Rademacher, seed).unwrap();
        let rep = grad_check(ObjectiveId::Prop, &inst.data, &inst.hp, scoped, Some(&probes), STEP, TOL).unwrap();
        assert!(rep.passed, "seed {seed}: {:e}", rep.max_rel_err);
        let full = grad_check(ObjectiveId::Prop, &inst.data, &inst.hp, cfg(), Some(&probes), STEP, TOL).unwrap();
        assert_ne!(rep.coords[0].analytic, full.coords[0].analytic);
    }
}

#[test]
fn effective_dimension_scope_keeps_the_exact_trace_gap() {
    let inst = tk::instance(&spec(0), 5);
    let probes = make_probes(inst.data.n(), 10, ProbeKind::Gaussian, 5).unwrap();
    let problem = Problem::from_dataset(&inst.data).unwrap();
    let scoped = ObjectiveConfig { ste_scope: SteScope::EffectiveDimension, ..cfg() };
    let est = evaluate_problem(ObjectiveId::Prop, &problem, &inst.hp, scoped, Some(&probes)).unwrap();
    let exact = evaluate_problem(ObjectiveId::Prop, &problem, &inst.hp, scoped, None).unwrap();
    assert!(est.stochastic);
    assert_eq!(est.terms.trace_gap, exact.terms.trace_gap);
    assert_ne!(est.terms.complexity, exact.terms.complexity);
}

#[test]
fn prop_example_instance() {
    let s = tk::InstanceSpec { n: (60, 60), m: (8, 8), d: (3, 3), ..Default::default() };
    let inst = tk::instance(&s, 31);
    let rep = grad_check(ObjectiveId::Prop, &inst.data, &inst.hp, ObjectiveConfig::default(), None, STEP, TOL).unwrap();
    assert!(rep.passed, "{:e}", rep.max_rel_err);
    assert_eq!(rep.coords.len(), 1 + 3 + 8 * 3);
}

#[test]
fn coarse_step_is_flagged() {
    let inst = tk::instance(&spec(0), 3);
    let rep = grad_check(ObjectiveId::Prop, &inst.data, &inst.hp, cfg(), None, 1e-1, TOL).unwrap();
    assert!(!rep.passed);
    assert!(rep.max_rel_err > TOL);
}

#[test]
fn zero_labels_give_zero_holdout_gradient() {
    let inst = tk::instance(&spec(0), 4);
    let n = inst.data.n();
    let split = inst.data.split.clone().unwrap();
    let data = Dataset::new(inst.data.x.clone(), DMatrix::zeros(n, 1)).unwrap().with_split(split).unwrap();
    let (rep, g) = grad_objective(ObjectiveId::HoldOut, &data, &inst.hp, cfg(), None).unwrap();
    assert_eq!(rep.value, 0.0);
    assert!(g.d_z.amax() == 0.0 && g.d_log_ell.amax() == 0.0);
}

#[test]
fn coincident_inducing_points_get_equal_gradients() {
    let s = tk::InstanceSpec { n: (40, 40), m: (5, 5), duplicates: 1, val_frac: Some(0.4), ..Default::default() };
    let inst = tk::instance(&s, 5);
    let z = &inst.hp.z;
    let (i, j) = (0..z.nrows())
        .flat_map(|i| (i + 1..z.nrows()).map(move |j| (i, j)))
        .find(|&(i, j)| z.row(i) == z.row(j))
        .unwrap();
    for id in ObjectiveId::ALL {
        let (_, g) = grad_objective(id, &inst.data, &inst.hp, cfg(), None).unwrap();
        let diff = (g.d_z.row(i) - g.d_z.row(j)).amax();
        assert!(diff <= 1e-10 * g.norm().max(1.0), "{id}: {diff:e}");
    }
}

#[test]
fn gradient_of_a_sum_is_the_sum_of_gradients() {
    let inst = tk::instance(&spec(0), 6);
    let problem = Problem::from_dataset(&inst.data).unwrap();
    let ids = [ObjectiveId::Prop, ObjectiveId::Creg, ObjectiveId::Gcv];
    let total = |hp: &HyperParams| -> f64 {
        ids.iter().map(|&id| evaluate_problem(id, &problem, hp, cfg(), None).unwrap().value).sum()
    };
    let grads: Vec<Vec<f64>> =
        ids.iter().map(|&id| grad_problem(id, &problem, &inst.hp, cfg(), None).unwrap().1.to_flat()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = inst.hp.to_flat();
    let dir: Vec<f64> = base.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let analytic: f64 = grads.iter().map(|g| g.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>()).sum();
    let shifted = |s: f64| {
        let v: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + s * d).collect();
        total(&inst.hp.with_flat(&v).unwrap())
    };
    let numeric = (shifted(STEP) - shifted(-STEP)) / (2.0 * STEP);
    assert!(tk::rel_err(analytic, numeric) <= TOL, "{analytic} vs {numeric}");
}

#[test]
fn stochastic_mode_is_prop_only() {
    let inst = tk::instance(&spec(0), 7);
    let probes = make_probes(inst.data.n(), 5, ProbeKind::Rademacher, 7).unwrap();
    for id in [ObjectiveId::HoldOut, ObjectiveId::Loocv, ObjectiveId::Gcv, ObjectiveId::Creg, ObjectiveId::Sgpr] {
        assert!(grad_objective(id, &inst.data, &inst.hp, cfg(), Some(&probes)).is_err(), "{id}");
    }
}

#[test]
fn gradients_are_finite_and_shaped_like_the_hyperparameters() {
    let inst = tk::instance(&spec(1), 8);
    for id in ObjectiveId::ALL {
        let (_, g) = grad_objective(id, &inst.data, &inst.hp, cfg(), None).unwrap();
        assert!(g.is_finite());
        assert_eq!(g.d_log_ell.len(), inst.hp.d());
        assert_eq!(g.d_z.shape(), inst.hp.z.shape());
    }
}

#[test]
fn gradients_are_reproducible() {
    let inst = tk::instance(&spec(0), 9);
    let a = grad_objective(ObjectiveId::Sgpr, &inst.data, &inst.hp, cfg(), None).unwrap().1;
    let b = grad_objective(ObjectiveId::Sgpr, &inst.data, &inst.hp, cfg(), None).unwrap().1;
    assert_eq!(a, b);
}

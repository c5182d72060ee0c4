use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nytune::hyperopt::{grid_search, init_hyperparams, log_grid, optimize, EpochRecord, OptConfig, Trajectory};
use nytune::{HyperParams, ObjectiveConfig, ObjectiveId, ProbeKind, SteScope};
use serde::{Deserialize, Serialize};

use crate::args::{Command, GridArgs, ModelArgs, OptimizeArgs, ProbeArg, SteScopeArg, SteStudyArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, Resolved, Seeds, Timings, MANIFEST_FILE};
use crate::source::{prepare, Prepared};

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const HYPERPARAMS_FILE: &str = "hyperparams.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GRID_FILE: &str = "grid.csv";
pub const GRID_ARGMIN_FILE: &str = "grid_argmin.json";
pub const STUDY_FILE: &str = "study.json";

/// Final hyperparameters in natural and log units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpFile {
    pub lambda: f64,
    pub log_lambda: f64,
    pub lengthscales: Vec<f64>,
    pub log_lengthscales: Vec<f64>,
    pub m: usize,
    pub d: usize,
    /// Inducing points, one row each.
    pub z: Vec<Vec<f64>>,
}

impl HpFile {
    pub fn from_hp(hp: &HyperParams) -> Self {
        Self {
            lambda: hp.lambda(),
            log_lambda: hp.log_lambda,
            lengthscales: hp.ls.values(),
            log_lengthscales: hp.ls.log_values().to_vec(),
            m: hp.m(),
            d: hp.d(),
            z: (0..hp.m()).map(|r| hp.z.row(r).iter().copied().collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub objective: ObjectiveId,
    pub ste: bool,
    pub t: Option<usize>,
    pub metric: String,
    pub epochs_run: usize,
    pub initial: Option<EpochRecord>,
    pub best_step: usize,
    pub best_value: Option<f64>,
    pub final_value: Option<f64>,
    pub stopped_early: bool,
    pub diverged: Option<String>,
    pub test_metric_initial: Option<f64>,
    /// Test metric of the returned (best) hyperparameters.
    pub test_metric_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridArgmin {
    pub objective: ObjectiveId,
    pub index: Option<usize>,
    pub lambda_index: Option<usize>,
    pub ell_index: Option<usize>,
    pub lambda: Option<f64>,
    pub ell: Option<f64>,
    pub value: Option<f64>,
    pub test_error: Option<f64>,
    pub failed_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteComparison {
    pub t: usize,
    pub file: String,
    pub diverged: Option<String>,
    /// `(step, |STE run - exact run| / |exact run|)` over steps present in both runs.
    pub run_gaps: Vec<(usize, f64)>,
    /// `(step, |estimate - exact| / |exact|)` at the STE run's own iterates.
    pub iterate_gaps: Vec<(usize, f64)>,
    pub max_run_gap: Option<f64>,
    pub mean_run_gap: Option<f64>,
    pub final_run_gap: Option<f64>,
    pub frac_run_gap_within_5pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteStudy {
    pub exact_file: String,
    pub exact_diverged: Option<String>,
    pub comparisons: Vec<SteComparison>,
}

/// Outcome of one command before the manifest is written.
struct Outcome {
    artifacts: Vec<String>,
    resolved: Resolved,
    probe_seed: Option<u64>,
    per_epoch_seconds: Vec<f64>,
    failure: Option<CliError>,
}

pub fn run(cmd: &Command) -> CliResult<()> {
    let start = Instant::now();
    let (name, out, seed, data_seed, data_args) = match cmd {
        Command::Optimize(a) => ("optimize", &a.out.out, a.model.seed, a.data.data_seed, &a.data),
        Command::Grid(a) => ("grid", &a.out.out, a.model.seed, a.data.data_seed, &a.data),
        Command::SteStudy(a) => ("ste-study", &a.out.out, a.model.seed, a.data.data_seed, &a.data),
        Command::Rerun(r) => {
            let manifest = Manifest::read(&r.manifest)?;
            let mut cmd = manifest.args;
            if let Some(dir) = &r.out {
                set_out(&mut cmd, dir.clone());
            }
            if matches!(cmd, Command::Rerun(_)) {
                return Err(CliError::usage("a manifest cannot record a rerun"));
            }
            return run(&cmd);
        }
    };
    fs::create_dir_all(out)?;
    let prepared = prepare(data_args)?;
    let outcome = match cmd {
        Command::Optimize(a) => cmd_optimize(a, &prepared, out)?,
        Command::Grid(a) => cmd_grid(a, &prepared, out)?,
        Command::SteStudy(a) => cmd_ste_study(a, &prepared, out)?,
        Command::Rerun(_) => unreachable!(),
    };
    let mut artifacts = outcome.artifacts;
    artifacts.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: name.to_string(),
        args: cmd.clone(),
        resolved: outcome.resolved,
        seeds: Seeds { seed, data_seed, probe_seed: outcome.probe_seed },
        dataset: prepared.fingerprint.clone(),
        artifacts,
        timings: Timings { total_seconds: start.elapsed().as_secs_f64(), per_epoch_seconds: outcome.per_epoch_seconds },
    };
    manifest.write(out)?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn set_out(cmd: &mut Command, dir: PathBuf) {
    match cmd {
        Command::Optimize(a) => a.out.out = dir,
        Command::Grid(a) => a.out.out = dir,
        Command::SteStudy(a) => a.out.out = dir,
        Command::Rerun(r) => r.out = Some(dir),
    }
}

fn objective_config(model: &ModelArgs) -> ObjectiveConfig {
    ObjectiveConfig { sigma2: model.sigma2, prop_reg_factor: model.prop_reg_factor, ..Default::default() }
}

fn opt_config(train: &TrainArgs, model: &ModelArgs, ste: bool, t: usize) -> OptConfig {
    OptConfig {
        learning_rate: train.lr,
        epochs: train.epochs,
        early_stop_patience: train.patience,
        seed: model.seed,
        ste_mode: ste,
        t,
        probe_kind: match train.probes {
            ProbeArg::Gaussian => ProbeKind::Gaussian,
            ProbeArg::Rademacher => ProbeKind::Rademacher,
        },
        objective: ObjectiveConfig {
            ste_scope: match train.ste_scope {
                SteScopeArg::Both => SteScope::Both,
                SteScopeArg::EffectiveDimension => SteScope::EffectiveDimension,
            },
            ..objective_config(model)
        },
        ..OptConfig::default()
    }
}

fn resolved(p: &Prepared, hp0: &HyperParams, model: &ModelArgs) -> Resolved {
    Resolved {
        lambda0: hp0.lambda(),
        ell0: hp0.ls.values()[0],
        m: hp0.m(),
        lr: None,
        epochs: None,
        patience: None,
        t: None,
        ste: None,
        sigma2: model.sigma2,
        prop_reg_factor: model.prop_reg_factor,
        metric: format!("{:?}", p.metric),
        threads: rayon::current_num_threads(),
    }
}

fn init(p: &Prepared, model: &ModelArgs) -> CliResult<HyperParams> {
    let n = p.problem.n();
    if model.m > n {
        return Err(CliError::usage(format!("--m {} exceeds the {n} training rows", model.m)));
    }
    Ok(init_hyperparams(&p.data, model.m, model.seed)?)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Epoch records for steps 1.. as JSON lines.
fn write_trajectory(dir: &Path, name: &str, traj: &Trajectory) -> CliResult<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join(name))?);
    for rec in &traj.records {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

struct TimedRun {
    hp: HyperParams,
    traj: Trajectory,
    per_epoch: f64,
}

fn timed_optimize(id: ObjectiveId, p: &Prepared, cfg: &OptConfig, hp0: &HyperParams) -> CliResult<TimedRun> {
    let t0 = Instant::now();
    let (hp, traj) = optimize(id, &p.problem, cfg, hp0, p.monitor.as_ref())?;
    let evals = traj.all_records().count().max(1);
    Ok(TimedRun { hp, traj, per_epoch: t0.elapsed().as_secs_f64() / evals as f64 })
}

fn cmd_optimize(a: &OptimizeArgs, p: &Prepared, out: &Path) -> CliResult<Outcome> {
    let id: ObjectiveId = a.objective.parse().map_err(|e: nytune::NyError| CliError::usage(e.to_string()))?;
    let hp0 = init(p, &a.model)?;
    let cfg = opt_config(&a.train, &a.model, a.ste, a.t);
    let run = timed_optimize(id, p, &cfg, &hp0)?;
    log::info!("{id}: {} epochs, best step {}", run.traj.records.len(), run.traj.best_step);

    write_trajectory(out, TRAJECTORY_FILE, &run.traj)?;
    write_json(out, HYPERPARAMS_FILE, &HpFile::from_hp(&run.hp))?;
    let test_metric_final = match &p.monitor {
        Some(mon) => mon.score(&p.problem, &run.hp).ok(),
        None => None,
    };
    let summary = RunSummary {
        objective: id,
        ste: a.ste,
        t: a.ste.then_some(a.t),
        metric: format!("{:?}", p.metric),
        epochs_run: run.traj.records.len(),
        initial: run.traj.initial.clone(),
        best_step: run.traj.best_step,
        best_value: run.traj.best_value,
        final_value: run.traj.records.last().and_then(|r| r.value),
        stopped_early: run.traj.stopped_early,
        diverged: run.traj.diverged.clone(),
        test_metric_initial: run.traj.initial.as_ref().and_then(|r| r.test_metric),
        test_metric_final,
    };
    write_json(out, SUMMARY_FILE, &summary)?;

    let mut res = resolved(p, &hp0, &a.model);
    res.lr = Some(cfg.learning_rate);
    res.epochs = Some(cfg.epochs);
    res.patience = Some(cfg.early_stop_patience);
    res.t = Some(cfg.t);
    res.ste = Some(cfg.ste_mode);
    Ok(Outcome {
        artifacts: vec![TRAJECTORY_FILE.into(), HYPERPARAMS_FILE.into(), SUMMARY_FILE.into()],
        resolved: res,
        probe_seed: run.traj.probe_seed,
        per_epoch_seconds: vec![run.per_epoch],
        failure: run.traj.diverged.map(|d| CliError::numerical(format!("optimization diverged at {d}"))),
    })
}

fn parse_grid(spec: &str, flag: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::usage(format!("{flag} expects min:max:count, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let min: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let max: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    Ok(log_grid(min, max, count)?)
}

fn parse_list<T: std::str::FromStr>(spec: &str, flag: &str) -> CliResult<Vec<T>> {
    let items: Result<Vec<T>, _> = spec.split(',').map(|s| s.trim().parse::<T>()).collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::usage(format!("cannot parse {flag} {spec:?}"))),
    }
}

fn csv_num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:e}"),
        _ => "NaN".to_string(),
    }
}

fn cmd_grid(a: &GridArgs, p: &Prepared, out: &Path) -> CliResult<Outcome> {
    let ids: Vec<ObjectiveId> = parse_list(&a.objectives.to_uppercase(), "--objectives")?;
    let lambdas = parse_grid(&a.lambda_grid, "--lambda-grid")?;
    let ells = parse_grid(&a.ell_grid, "--ell-grid")?;
    let hp0 = init(p, &a.model)?;
    let cfg = objective_config(&a.model);

    let mut results = Vec::with_capacity(ids.len());
    for (k, &id) in ids.iter().enumerate() {
        // Test error does not depend on the objective, so score it once.
        let monitor = if k == 0 { p.monitor.as_ref() } else { None };
        results.push(grid_search(id, &p.problem, &hp0.z, &lambdas, &ells, cfg, monitor)?);
    }

    let mut csv = String::from("lambda,ell");
    for id in &ids {
        csv.push(',');
        csv.push_str(id.name());
    }
    csv.push_str(",test_error\n");
    for (c, cell) in results[0].cells.iter().enumerate() {
        csv.push_str(&format!("{:e},{:e}", cell.lambda, cell.ell));
        for r in &results {
            csv.push(',');
            csv.push_str(&csv_num(r.cells[c].value));
        }
        csv.push(',');
        csv.push_str(&csv_num(cell.test_error));
        csv.push('\n');
    }
    fs::write(out.join(GRID_FILE), csv)?;

    let argmins: Vec<GridArgmin> = results
        .iter()
        .map(|r| {
            let cell = r.argmin.map(|i| &r.cells[i]);
            GridArgmin {
                objective: r.objective,
                index: r.argmin,
                lambda_index: r.argmin.map(|i| i / r.n_ell),
                ell_index: r.argmin.map(|i| i % r.n_ell),
                lambda: cell.map(|c| c.lambda),
                ell: cell.map(|c| c.ell),
                value: cell.and_then(|c| c.value),
                test_error: r.argmin.and_then(|i| results[0].cells[i].test_error),
                failed_cells: r.cells.iter().filter(|c| c.value.is_none()).count(),
            }
        })
        .collect();
    write_json(out, GRID_ARGMIN_FILE, &argmins)?;

    Ok(Outcome {
        artifacts: vec![GRID_FILE.into(), GRID_ARGMIN_FILE.into()],
        resolved: resolved(p, &hp0, &a.model),
        probe_seed: None,
        per_epoch_seconds: Vec::new(),
        failure: None,
    })
}

fn rel_gap(a: f64, exact: f64) -> f64 {
    (a - exact).abs() / exact.abs().max(f64::MIN_POSITIVE)
}

fn compare(t: usize, file: String, exact: &Trajectory, ste: &Trajectory) -> SteComparison {
    let exact_at = |step: usize| exact.records.iter().find(|r| r.step == step).and_then(|r| r.value);
    let run_gaps: Vec<(usize, f64)> =
        ste.records.iter().filter_map(|r| Some((r.step, rel_gap(r.value?, exact_at(r.step)?)))).collect();
    let iterate_gaps = ste.records.iter().filter_map(|r| Some((r.step, rel_gap(r.value?, r.exact_value?)))).collect();
    let gaps: Vec<f64> = run_gaps.iter().map(|g| g.1).collect();
    let count = gaps.len() as f64;
    SteComparison {
        t,
        file,
        diverged: ste.diverged.clone(),
        max_run_gap: gaps.iter().copied().reduce(f64::max),
        mean_run_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / count),
        final_run_gap: gaps.last().copied(),
        frac_run_gap_within_5pct: (!gaps.is_empty())
            .then(|| gaps.iter().filter(|&&g| g <= 0.05).count() as f64 / count),
        run_gaps,
        iterate_gaps,
    }
}

fn cmd_ste_study(a: &SteStudyArgs, p: &Prepared, out: &Path) -> CliResult<Outcome> {
    let ts: Vec<usize> = parse_list(&a.t_list, "--t-list")?;
    if ts.contains(&0) {
        return Err(CliError::usage("--t-list entries must be >= 1"));
    }
    let hp0 = init(p, &a.model)?;
    let id = ObjectiveId::Prop;
    let mut artifacts = Vec::new();
    let mut per_epoch = Vec::new();

    let exact_file = "trajectory_exact.jsonl".to_string();
    let exact = timed_optimize(id, p, &opt_config(&a.train, &a.model, false, ts[0]), &hp0)?;
    write_trajectory(out, &exact_file, &exact.traj)?;
    artifacts.push(exact_file.clone());
    per_epoch.push(exact.per_epoch);

    let mut comparisons = Vec::new();
    let mut probe_seed = None;
    for &t in &ts {
        let file = format!("trajectory_t{t}.jsonl");
        let run = timed_optimize(id, p, &opt_config(&a.train, &a.model, true, t), &hp0)?;
        if let Some(d) = &run.traj.diverged {
            log::warn!("STE run with t = {t} diverged at {d}");
        }
        write_trajectory(out, &file, &run.traj)?;
        probe_seed = probe_seed.or(run.traj.probe_seed);
        comparisons.push(compare(t, file.clone(), &exact.traj, &run.traj));
        artifacts.push(file);
        per_epoch.push(run.per_epoch);
    }
    let study = SteStudy { exact_file, exact_diverged: exact.traj.diverged.clone(), comparisons };
    write_json(out, STUDY_FILE, &study)?;
    artifacts.push(STUDY_FILE.into());

    let mut res = resolved(p, &hp0, &a.model);
    res.lr = Some(a.train.lr);
    res.epochs = Some(a.train.epochs);
    res.patience = Some(a.train.patience);
    Ok(Outcome {
        artifacts,
        resolved: res,
        probe_seed,
        per_epoch_seconds: per_epoch,
        failure: exact.traj.diverged.map(|d| CliError::numerical(format!("exact run diverged at {d}"))),
    })
}

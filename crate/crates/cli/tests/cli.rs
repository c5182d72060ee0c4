mod common;

use std::fs;

use common::{artifacts, json, jsonl, manifest_sans_timings, nytune};
use nytune::data::{synthetic_regression, write_delimited, write_sparse, SyntheticSpec};

#[test]
fn zero_epochs_writes_the_start_point_and_an_empty_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let run = nytune(dir.path(), &["optimize", "--epochs", "0", "--m", "20", "--out", "o"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let out = dir.path().join("o");
    assert_eq!(fs::read_to_string(out.join("trajectory.jsonl")).unwrap(), "");
    let hp = json(&out.join("hyperparams.json"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(hp["lambda"], m["resolved"]["lambda0"]);
    assert_eq!(hp["m"], 20);
    assert_eq!(json(&out.join("summary.json"))["epochs_run"], 0);
}

#[test]
fn repeated_invocations_give_identical_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let run = nytune(dir.path(), &["optimize", "--epochs", "15", "--m", "15", "--n", "200", "--out", out]);
        assert_eq!(run.code, 0, "{}", run.stderr);
    }
    let a = fs::read(dir.path().join("a/trajectory.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b/trajectory.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn trajectory_records_are_contiguous() {
    let dir = tempfile::tempdir().unwrap();
    let run =
        nytune(dir.path(), &["optimize", "--epochs", "12", "--m", "10", "--n", "150", "--patience", "0", "--out", "o"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let recs = jsonl(&dir.path().join("o/trajectory.jsonl"));
    let steps: Vec<u64> = recs.iter().map(|r| r["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, (1..=12).collect::<Vec<u64>>());
    assert!(recs.iter().all(|r| r["value"].is_f64() && r["test_metric"].is_f64()));
}

#[test]
fn single_cell_grid_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let run = nytune(
        dir.path(),
        &[
            "grid",
            "--lambda-grid",
            "1e-3:1e-3:1",
            "--ell-grid",
            "1:1:1",
            "--objectives",
            "creg",
            "--m",
            "10",
            "--out",
            "g",
        ],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let csv = fs::read_to_string(dir.path().join("g/grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,ell,CREG,test_error");
    assert_eq!(lines.len(), 2);
}

#[test]
fn five_by_five_grid_with_two_objectives() {
    let dir = tempfile::tempdir().unwrap();
    let run = nytune(
        dir.path(),
        &[
            "grid",
            "--lambda-grid",
            "1e-5:1e-1:5",
            "--ell-grid",
            "0.3:3:5",
            "--objectives",
            "creg,gcv",
            "--m",
            "20",
            "--sigma2",
            "0.01",
            "--out",
            "g",
        ],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let csv = fs::read_to_string(dir.path().join("g/grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 5));
    let argmin = json(&dir.path().join("g/grid_argmin.json"));
    let argmin = argmin.as_array().unwrap();
    assert_eq!(argmin.len(), 2);
    assert!(argmin.iter().all(|a| a["index"].is_u64()));

    // With a matching noise variance the unbiased proxies see similar landscapes: the argmins agree up to one cell.
    let li = |k: usize| argmin[k]["lambda_index"].as_i64().unwrap();
    let ei = |k: usize| argmin[k]["ell_index"].as_i64().unwrap();
    assert!((li(0) - li(1)).abs() <= 1 && (ei(0) - ei(1)).abs() <= 1, "{argmin:?}");
}

#[test]
fn failed_grid_cells_are_nan_and_the_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    // Vanishing lambda with a tiny lengthscale drives LOOCV leverages to one.
    let run = nytune(
        dir.path(),
        &[
            "grid",
            "--lambda-grid",
            "1e-300:1e-300:1",
            "--ell-grid",
            "1e-3:1:2",
            "--objectives",
            "loocv,creg",
            "--m",
            "30",
            "--n",
            "60",
            "--out",
            "g",
        ],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let csv = fs::read_to_string(dir.path().join("g/grid.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2], "NaN");
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap().is_finite()));
    let argmin = json(&dir.path().join("g/grid_argmin.json"));
    assert_eq!(argmin[0]["failed_cells"], 1);
    assert_eq!(argmin[0]["index"], 1);
}

#[test]
fn ste_study_writes_one_file_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = nytune(dir.path(), &["ste-study", "--epochs", "5", "--m", "10", "--n", "200", "--out", "s"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let s = dir.path().join("s");
    let mut names: Vec<String> = fs::read_dir(&s)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".jsonl"))
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["trajectory_exact.jsonl", "trajectory_t10.jsonl", "trajectory_t100.jsonl", "trajectory_t20.jsonl"]
    );
    let study = json(&s.join("study.json"));
    assert_eq!(study["comparisons"].as_array().unwrap().len(), 3);
    assert!(json(&s.join("manifest.json"))["seeds"]["probe_seed"].is_u64());
}

#[test]
fn rerun_reproduces_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["optimize", "--epochs", "6", "--m", "10", "--n", "150", "--out", "opt"],
        &["optimize", "--ste", "--t", "5", "--epochs", "6", "--m", "10", "--n", "150", "--out", "ste"],
        &["grid", "--lambda-grid", "1e-4:1:3", "--ell-grid", "0.5:2:3", "--m", "10", "--n", "150", "--out", "grid"],
        &["ste-study", "--t-list", "4,8", "--epochs", "4", "--m", "10", "--n", "150", "--out", "study"],
    ];
    for args in cases {
        let out = *args.last().unwrap();
        assert_eq!(nytune(dir.path(), args).code, 0, "{args:?}");
        let manifest = dir.path().join(out).join("manifest.json");
        let again = format!("{out}-again");
        let run = nytune(dir.path(), &["rerun", "--manifest", manifest.to_str().unwrap(), "--out", &again]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        assert_eq!(artifacts(&dir.path().join(out)), artifacts(&dir.path().join(&again)), "{out}");
        let mut a = manifest_sans_timings(&dir.path().join(out));
        let mut b = manifest_sans_timings(&dir.path().join(&again));
        a.as_object_mut().unwrap().remove("args");
        b.as_object_mut().unwrap().remove("args");
        assert_eq!(a, b, "{out}");
    }
}

#[test]
fn file_datasets_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic_regression(&SyntheticSpec { n: 120, d: 3, ..Default::default() }).unwrap();
    write_delimited(&ds, &dir.path().join("d.csv")).unwrap();
    write_sparse(&ds, &dir.path().join("d.svm")).unwrap();
    for (file, format) in [("d.csv", "delimited"), ("d.svm", "sparse")] {
        let run = nytune(
            dir.path(),
            &["optimize", "--data", file, "--format", format, "--m", "10", "--epochs", "3", "--out", format],
        );
        assert_eq!(run.code, 0, "{format}: {}", run.stderr);
        let m = json(&dir.path().join(format).join("manifest.json"));
        assert_eq!(m["dataset"]["n"], 120);
        assert_eq!(m["dataset"]["d"], 3);
        assert_eq!(m["dataset"]["n_test"], 36);
    }
    let a = json(&dir.path().join("delimited/manifest.json"));
    let b = json(&dir.path().join("sparse/manifest.json"));
    assert_eq!(a["dataset"]["sha256_x"], b["dataset"]["sha256_x"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(nytune(p, &["optimize", "--no-such-flag"]).code, 2);
    assert_eq!(nytune(p, &["optimize", "--objective", "lasso", "--out", "x"]).code, 2);
    assert_eq!(nytune(p, &["optimize", "--m", "100000", "--out", "x"]).code, 2);
    assert_eq!(
        nytune(p, &["optimize", "--objective", "gcv", "--ste", "--epochs", "1", "--m", "5", "--out", "x"]).code,
        2
    );
    assert_eq!(nytune(p, &["grid", "--lambda-grid", "1:2", "--out", "x"]).code, 2);
    assert_eq!(nytune(p, &["optimize", "--data", "missing.csv", "--out", "x"]).code, 4);
    fs::write(p.join("bad.csv"), "1,2,3\n4,five,6\n").unwrap();
    assert_eq!(nytune(p, &["optimize", "--data", "bad.csv", "--out", "x"]).code, 4);
    assert_eq!(nytune(p, &["rerun", "--manifest", "missing.json"]).code, 4);

    let out = std::process::Command::new(env!("CARGO_BIN_EXE_nytune"))
        .args(["optimize", "--epochs", "0", "--m", "5", "--out", "x"])
        .current_dir(p)
        .env("NYTUNE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_the_numerical_code_and_keeps_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let run =
        nytune(dir.path(), &["optimize", "--lr", "1000", "--epochs", "20", "--m", "30", "--n", "300", "--out", "o"]);
    let out = dir.path().join("o");
    let summary = json(&out.join("summary.json"));
    assert_eq!(run.code, 3, "{}", run.stderr);
    assert!(summary["diverged"].is_string());
    let recs = jsonl(&out.join("trajectory.jsonl"));
    assert_eq!(recs.last().unwrap()["status"], "diverged");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    for (threads, out) in [("1", "one"), ("3", "three")] {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_nytune"))
            .args([
                "grid",
                "--lambda-grid",
                "1e-4:1:4",
                "--ell-grid",
                "0.5:2:4",
                "--m",
                "10",
                "--n",
                "150",
                "--out",
                out,
            ])
            .current_dir(dir.path())
            .env("NYTUNE_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(artifacts(&dir.path().join("one")), artifacts(&dir.path().join("three")));
}

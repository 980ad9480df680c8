use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loss_gap::{fixtures, Matrix, ObservationMode};
use loss_gap_cli::commands::sweep::{self, SweepKind};
use loss_gap_cli::meta::{read_csv, read_metadata};
use loss_gap_cli::{LoadedConfig, RunOptions};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loss-gap"))
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str], cfg: &Path) -> Output {
    bin().args(args).arg("--config").arg(cfg).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn zero_noise_fixture() -> Value {
    json!(fixtures::two_group_1d().with_noise_cov(Matrix::zeros(1, 1)).unwrap())
}

#[test]
fn analytic_fixture_values_and_byte_stable_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.json", &json!({"population": fixtures::two_group_1d(), "output_dir": "o"}));
    let out = run(&["analytic"], &cfg);
    assert!(out.status.success(), "{}", stderr(&out));
    let path = tmp.path().join("o/analytic.json");
    let first = fs::read(&path).unwrap();
    let doc: Value = serde_json::from_slice(&first).unwrap();
    let ng = &doc["predictors"]["no_group"];
    assert!((ng["beta_hat"][0].as_f64().unwrap() - 8.0 / 11.0).abs() < 1e-12);
    assert!((ng["alpha_hat"].as_f64().unwrap() - 6.0 / 11.0).abs() < 1e-12);
    let wg = &doc["predictors"]["with_group"];
    assert!((wg["beta_g"].as_f64().unwrap() - 9.0 / 5.0).abs() < 1e-12);
    let meta = &doc["metadata"];
    for key in ["schema_version", "tool", "command", "master_seed", "rng", "config_hash"] {
        assert!(meta.get(key).is_some(), "missing metadata {key}");
    }
    assert!(meta["config_hash"].as_str().unwrap().starts_with("sha256:"));

    assert!(run(&["analytic"], &cfg).status.success());
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn zero_noise_population_has_no_discrepancy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "z.json", &json!({"population": zero_noise_fixture(), "output_dir": "o"}));
    let out = run(&["analytic"], &cfg);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: Value = serde_json::from_slice(&fs::read(tmp.path().join("o/analytic.json")).unwrap()).unwrap();
    for report in doc["reports"].as_array().unwrap() {
        for key in ["sld_res", "sld_sq", "cld_res", "cld_sq"] {
            assert!(report[key].as_f64().unwrap().abs() < 1e-12, "{key} in {report}");
        }
    }
}

#[test]
fn noise_sweep_recovers_the_fixture_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.json",
        &json!({
            "population": zero_noise_fixture(),
            "sample_size": 2000,
            "repetitions": 100,
            "noise_grid": [0.0, 1.0],
            "standardize": false,
            "master_seed": 3,
            "output_dir": "o"
        }),
    );
    let lc = LoadedConfig::load(&cfg).unwrap();
    let out = sweep::run(&lc, &RunOptions::default(), SweepKind::Noise).unwrap();
    let at_one = out
        .summary
        .iter()
        .find(|s| s.mode == ObservationMode::NoGroup && s.level.value() == 1.0)
        .unwrap();
    let z = (at_one.sld_res - 9.0 / 11.0) / at_one.sld_res_se;
    assert!(z.abs() <= 3.0, "sld_res {} is {z:.2} SE from 9/11", at_one.sld_res);
    let at_zero = out.summary.iter().find(|s| s.level.value() == 0.0).unwrap();
    assert!(at_zero.sld_res < 1e-9);
}

#[test]
fn sweeps_are_deterministic_and_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let pop = fixtures::random_population(3, 4);
    let cfg = write_config(
        tmp.path(),
        "d.json",
        &json!({"population": pop, "sample_size": 300, "repetitions": 6, "noise_grid": [0, 0.5, 2], "master_seed": 9}),
    );
    let mut files = Vec::new();
    for (jobs, dir) in [("1", "j1"), ("4", "j4"), ("4", "j4b")] {
        let out_dir = tmp.path().join(dir);
        let out = bin()
            .args(["sweep-noise", "--jobs", jobs, "--config"])
            .arg(&cfg)
            .arg("--output-dir")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        files.push((fs::read(out_dir.join("sweep_noise.csv")).unwrap(), fs::read(out_dir.join("sweep_noise_summary.csv")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[1], files[2]);
}

#[test]
fn omitting_nothing_matches_zero_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let base = json!({
        "population": fixtures::random_population(2, 7),
        "sample_size": 400,
        "repetitions": 5,
        "master_seed": 21,
        "noise_grid": [0.0],
        "omit": {"k_values": [0, 1]}
    });
    let lc = LoadedConfig::load(&write_config(tmp.path(), "o.json", &base)).unwrap();
    let noise = sweep::run(&lc, &RunOptions::default(), SweepKind::Noise).unwrap();
    let omit = sweep::run(&lc, &RunOptions::default(), SweepKind::Omit).unwrap();
    let k0: Vec<_> = omit.rows.iter().filter(|r| r.level.value() == 0.0).collect();
    assert_eq!(k0.len(), noise.rows.len());
    for (a, b) in k0.iter().zip(&noise.rows) {
        assert_eq!(a.report, b.report);
        assert_eq!(a.rep, b.rep);
    }
    let meta = read_metadata(&omit.rows_path).unwrap();
    assert!(meta.iter().any(|(k, _)| k == "omit_order"));
}

#[test]
fn shift_writes_bracketed_analytic_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sh.json",
        &json!({
            "repetitions": 4,
            "output_dir": "o",
            "shift": {
                "scenario": {"mu": [1.0, 0.0], "sigma": [[1.0, 0.2], [0.2, 1.0]], "noise_cov": [[0.5, 0.0], [0.0, 1.0]], "beta": [1.0, -0.5]},
                "max_k": 3,
                "batch_size": 200
            }
        }),
    );
    let out = run(&["shift"], &cfg);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = read_csv(&tmp.path().join("o/persistence_analytic.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for r in &rows {
        let v: f64 = r[col("sld")].parse().unwrap();
        let lo: f64 = r[col("lower")].parse().unwrap();
        let hi: f64 = r[col("upper")].parse().unwrap();
        assert!(lo <= hi && v.abs() <= hi.abs().max(lo.abs()) + 1e-9);
    }
    let (_, reps) = read_csv(&tmp.path().join("o/shift_reps.csv")).unwrap();
    assert_eq!(reps.len(), 4 * 4 * 2);
}

#[test]
fn reweight_from_csv_equalises_means() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("sex,x1,x2,income\n");
    for i in 0..60 {
        let g = if i % 3 == 0 { "f" } else { "m" };
        let shift = if g == "f" { 1.0 } else { 0.0 };
        let x1 = (i as f64 * 0.37).sin() + shift;
        let x2 = (i as f64 * 0.71).cos();
        csv.push_str(&format!("{g},{x1},{x2},{}\n", 2.0 * x1 - x2 + 0.1 * (i % 7) as f64));
    }
    fs::write(tmp.path().join("data.csv"), csv).unwrap();
    let cfg = write_config(
        tmp.path(),
        "r.json",
        &json!({
            "dataset": {"path": "data.csv", "group_column": "sex", "group_mapping": {"f": 1, "m": 0}, "target_column": "income"},
            "output_dir": "o",
            "reweight": {"write_lp_debug": true}
        }),
    );
    let out = run(&["reweight"], &cfg);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&fs::read(tmp.path().join("o/reweight.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "optimal");
    assert!(summary["max_mean_gap"].as_f64().unwrap() <= 1e-6);
    let (header, weights) = read_csv(&tmp.path().join("o/weights.csv")).unwrap();
    assert_eq!(header.len(), 2);
    assert_eq!(weights.len(), 60);
    for w in &weights {
        let w: f64 = w[1].parse().unwrap();
        assert!((-1e-9..=1.0 + 1e-9).contains(&w));
    }
    assert!(tmp.path().join("o/resampled.csv").exists());
    assert!(tmp.path().join("o/lp_debug.txt").exists());
}

#[test]
fn config_and_io_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = run(&["analytic"], &tmp.path().join("nope.json"));
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).starts_with("error kind=io code=2 message=\""), "{}", stderr(&missing));

    let bad = write_config(tmp.path(), "bad.json", &json!({"repetitons": 3}));
    let out = run(&["sweep-noise"], &bad);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error kind=config code=2"));

    let no_grid = write_config(tmp.path(), "ng.json", &json!({"population": fixtures::two_group_1d(), "sample_size": 50}));
    assert_eq!(run(&["sweep-noise"], &no_grid).status.code(), Some(2));
}

#[test]
fn unmapped_group_label_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("d.csv"), "g,x,y\na,1,2\nb,2,3\nc,3,1\n").unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({
            "dataset": {"path": "d.csv", "group_column": "g", "group_mapping": {"a": 0, "b": 1}, "target_column": "y"},
            "noise_grid": [0]
        }),
    );
    let out = run(&["sweep-noise"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error kind=data code=2"), "{}", stderr(&out));
}

#[test]
fn collinear_features_are_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("g,a,b,y\n");
    for i in 0..40 {
        let a = (i as f64 * 0.3).sin();
        csv.push_str(&format!("{},{a},{},{}\n", i % 2, 2.0 * a, a + 0.01 * i as f64));
    }
    fs::write(tmp.path().join("d.csv"), csv).unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &json!({
            "dataset": {"path": "d.csv", "group_column": "g", "group_mapping": {"0": 0, "1": 1}, "target_column": "y"},
            "noise_grid": [0],
            "repetitions": 2,
            "output_dir": "o"
        }),
    );
    let out = run(&["sweep-noise"], &cfg);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error kind=numerical code=3"));
}

#[test]
fn mc_validate_prints_one_line_per_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["mc-validate", "--specs", "2", "--n", "20000", "--output-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(matches!(out.status.code(), Some(0) | Some(1)), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let summary: Vec<&str> = stdout.lines().filter(|l| l.starts_with("mc-validate: ")).collect();
    assert_eq!(summary.len(), 1, "{stdout}");
    let checks: Vec<&str> = stdout.lines().filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")).collect();
    assert!(summary[0].contains(&format!("/{} checks passed", checks.len())), "{}", summary[0]);
    let (_, rows) = read_csv(&tmp.path().join("mc_validate.csv")).unwrap();
    assert_eq!(rows.len(), checks.len());
    let meta = read_metadata(&tmp.path().join("mc_validate.csv")).unwrap();
    assert!(meta.iter().any(|(k, v)| k == "master_seed" && v == "1"));
}

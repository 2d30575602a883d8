use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gsca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsca"))
        .args(args)
        .env_remove("GSCA_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate_small(dir: &Path, seed: &str) {
    let out = dir.to_str().unwrap();
    let o = gsca(&[
        "simulate", "--rows", "20", "--j1", "15", "--j2", "25", "--rank", "3", "--snr1", "5", "--snr2", "5", "--seed", seed,
        "--out", out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate_small(&a, "9");
    simulate_small(&b, "9");
    for name in ["X1.csv", "X2.csv", "Z_true.csv", "Theta_true.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = tmp.path().join("c");
    simulate_small(&c, "10");
    assert_ne!(fs::read(a.join("X2.csv")).unwrap(), fs::read(c.join("X2.csv")).unwrap());
    let m = read_json(a.join("manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 9);
}

#[test]
fn simulate_defaults_to_full_size() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = gsca(&["simulate", "--keep-constant-columns", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = read_json(out.join("truth.json"));
    assert_eq!(t["params"]["rows"], 160);
    assert_eq!(t["params"]["j1"], 410);
    assert_eq!(t["params"]["j2"], 1000);
    assert_eq!(t["params"]["rank"], 10);
}

#[test]
fn zero_snr_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gsca(&["simulate", "--snr1", "0", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("snr1"));
}

#[test]
fn non_binary_value_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let x1 = tmp.path().join("x1.csv");
    let x2 = tmp.path().join("x2.csv");
    fs::write(&x1, "a,b\n0,1\n2,NA\n1,0\n").unwrap();
    fs::write(&x2, "c\n0.5\n1.5\nNA\n").unwrap();
    let o = gsca(&[
        "fit", "--x1", x1.to_str().unwrap(), "--x2", x2.to_str().unwrap(), "--lambda", "1", "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn row_count_mismatch_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let x1 = tmp.path().join("x1.csv");
    let x2 = tmp.path().join("x2.csv");
    fs::write(&x1, "a\n0\n1\n").unwrap();
    fs::write(&x2, "c\n0.5\n1.5\n2.0\n").unwrap();
    let o = gsca(&[
        "fit", "--x1", x1.to_str().unwrap(), "--x2", x2.to_str().unwrap(), "--lambda", "1", "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_lambda_flags_saturation() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "4");
    let out = tmp.path().join("fit");
    let o = gsca(&[
        "fit", "--x1", sim.join("X1.csv").to_str().unwrap(), "--x2", sim.join("X2.csv").to_str().unwrap(), "--penalty",
        "gdp", "--lambda", "0", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = read_json(out.join("fit.json"));
    assert_eq!(fit["warned_saturated"], true);
    for f in ["A.csv", "B1.csv", "B2.csv", "Z.csv", "mu.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn nuclear_fit_agrees_across_tolerances() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "5");
    let run = |eps: &str| {
        let out = tmp.path().join(format!("fit{eps}"));
        let o = gsca(&[
            "fit", "--x1", sim.join("X1.csv").to_str().unwrap(), "--x2", sim.join("X2.csv").to_str().unwrap(),
            "--penalty", "nuclear", "--lambda", "8", "--eps", eps, "--max-iter", "100000", "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        read_json(out.join("fit.json"))
    };
    let loose = run("1e-5");
    let tight = run("1e-8");
    assert_eq!(loose["rank"], tight["rank"]);
    assert!(tight["iterations"].as_u64() >= loose["iterations"].as_u64());
    // same convex optimum; the loose stop is only less precise
    let last = |v: &Value| v["loss_trace"].as_array().unwrap().last().unwrap().as_f64().unwrap();
    assert!(last(&tight) <= last(&loose));
    let s2 = |v: &Value| v["sigma2"].as_f64().unwrap();
    assert!((s2(&loose) - s2(&tight)).abs() < 5e-2 * s2(&tight));
    let sv = |v: &Value| v["singular_values"][0].as_f64().unwrap();
    assert!((sv(&loose) - sv(&tight)).abs() < 5e-2 * sv(&tight));
}

#[test]
fn cv_accepts_a_single_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "6");
    let out = tmp.path().join("cv");
    let o = gsca(&[
        "cv", "--x1", sim.join("X1.csv").to_str().unwrap(), "--x2", sim.join("X2.csv").to_str().unwrap(), "--lambdas",
        "30", "--folds", "7", "--eps", "1e-5", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cv = read_json(out.join("cv.json"));
    assert_eq!(cv["lambda_grid"].as_array().unwrap().len(), 1);
    assert_eq!(cv["best_lambda"], 30.0);
    assert_eq!(cv["folds"], 7);
    let log = fs::read_to_string(out.join("cv_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 7);
    assert!(out.join("fit.json").exists());
}

#[test]
fn path_scores_against_simulated_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "7");
    let out = tmp.path().join("path");
    let o = gsca(&[
        "path", "--x1", sim.join("X1.csv").to_str().unwrap(), "--x2", sim.join("X2.csv").to_str().unwrap(), "--truth",
        sim.to_str().unwrap(), "--penalty", "nuclear", "--lambdas", "12,8,4", "--eps", "1e-6", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("path.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("model,lambda,rmse_theta"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gsca"))
        .args(["simulate", "--rows", "10", "--j1", "5", "--j2", "6", "--rank", "2"])
        .env("GSCA_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("X1.csv").exists());
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn unknown_experiment_lists_valid_ids() {
    let o = gsca(&["reproduce", "fig6"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    for id in ["table2", "fig3", "fig4", "fig5", "fig7", "fig8", "fig9", "fig2-overfit"] {
        assert!(msg.contains(id), "{id} missing from: {msg}");
    }
}

#[test]
fn help_exits_cleanly() {
    let o = gsca(&["--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("reproduce"));
}

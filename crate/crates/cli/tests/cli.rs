use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mfgplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfgplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(o));
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn simulate_reports_steered_endpoint() {
    let o = mfgplan(&[
        "simulate",
        "--model",
        "section4",
        "--control",
        "section4-utilde",
        "--steps",
        "2000",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("t,x1,x2,x3\n"));
    let last = out.lines().last().unwrap();
    assert_eq!(last, "m(T) = (0.716531, 0.283469, 0.000000)");
}

#[test]
fn simulate_writes_flow_file_and_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flows").join("m.csv");
    let o = mfgplan(&[
        "simulate",
        "--model",
        "two-state",
        "--control",
        "max",
        "--steps",
        "200",
        "--mT",
        "exp(-1), 1-exp(-1)",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 202);
    let line = stdout(&o);
    let gap: f64 = line.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(gap < 1e-9, "{line}");
}

#[test]
fn missing_model_file_is_a_usage_error_naming_the_path() {
    let o = mfgplan(&["simulate", "--model", "/nonexistent/game.model"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/game.model"));
}

#[test]
fn malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.csv", "state,step,action_index,weight\n1,0,zero,1\n");
    let problem = write(dir.path(), "p.txt", "m0 = 1,0,0\nmT = 0.7,0.3,0\n");
    let o = mfgplan(&[
        "check",
        "--model",
        "section4",
        "--problem",
        &problem,
        "--strategy",
        &bad,
        "--phi-T",
        "0,0,0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.csv"));

    let o = mfgplan(&["simulate", "--model", "section4", "--control", "bang-bang"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mfgplan(&["simulate", "--model", "section4", "--m0", "0.5,0.6,0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mfgplan(&["simulate", "--model", "section4", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mfgplan(&["--workers", "0", "validate", "--model", "section4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn model_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        dir.path(),
        "decay.model",
        "name = decay\nd = 2\nT = 1\nactions = [0, 1]\nQ[1][2] = 1\nQ[1][1] = auto\ng[1] = 0\ng[2] = 0\n",
    );
    let o = mfgplan(&["simulate", "--model", &model, "--steps", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().last().unwrap().starts_with("m(T) = (0.367879"));
}

#[test]
fn bellman_value_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let phi = dir.path().join("phi.csv");
    let greedy = dir.path().join("greedy.csv");
    let v = json(&mfgplan(&[
        "bellman",
        "--model",
        "two-state",
        "--steps",
        "2000",
        "--m0",
        "1,0",
        "--out",
        phi.to_str().unwrap(),
        "--greedy-out",
        greedy.to_str().unwrap(),
    ]));
    let value = v["value"].as_f64().unwrap();
    assert!((value - (1.0 - (-1.0f64).exp())).abs() < 1e-6, "{value}");
    assert!(phi.exists() && greedy.exists());
    // the uniform default strategy leaves regret
    assert!(v["regret_of_strategy"].as_f64().unwrap() > 0.0);
}

#[test]
fn check_reports_conditions() {
    let v = json(&mfgplan(&["check", "--model", "exit", "--samples", "300"]));
    assert_eq!(v["monotonicity"]["verdict"], "strict");
    assert!(v["classical"].is_null());
    assert!(v["concavity"].is_object());
}

#[test]
fn check_rejects_steering_control_near_switch() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write(dir.path(), "p.txt", "m0 = 1, 0, 0\nmT = exp(-1/3), 1 - exp(-1/3), 0\n");
    let v = json(&mfgplan(&[
        "check",
        "--model",
        "section4",
        "--problem",
        &problem,
        "--control",
        "section4-utilde",
        "--phi-T",
        "0, 1, 0",
        "--samples",
        "100",
    ]));
    let c = &v["classical"];
    assert_eq!(c["passed"], false);
    assert_eq!(c["argmax_ok"], false);
    assert!(c["terminal_gap"].as_f64().unwrap() < 1e-4);
    let t = c["worst"]["t_left"].as_f64().unwrap();
    assert!((0.5..0.8).contains(&t), "worst violation at {t}");
}

#[test]
fn mfg_reports_residual_history() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&mfgplan(&[
        "mfg",
        "--model",
        "two-state",
        "--steps",
        "100",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    assert_eq!(v["converged"], true);
    let res = v["residuals"].as_array().unwrap();
    assert!(!res.is_empty());
    assert!(dir.path().join("strategy.csv").exists());
}

#[test]
fn montecarlo_agrees_and_rejects_zero_paths() {
    let v = json(&mfgplan(&[
        "--seed",
        "3",
        "montecarlo",
        "--model",
        "section4",
        "--steps",
        "50",
        "--paths",
        "20000",
        "--control",
        "section4-utilde",
    ]));
    assert!(v["agreement_ratio"].as_f64().unwrap() <= 1.0);
    assert!(v["payoff_z"].as_f64().unwrap() <= 3.0);
    let o = mfgplan(&["montecarlo", "--model", "section4", "--paths", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn montecarlo_writes_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("paths.csv");
    let o = mfgplan(&[
        "montecarlo",
        "--model",
        "two-state",
        "--steps",
        "20",
        "--paths",
        "100",
        "--keep-paths",
        "5",
        "--paths-out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out).unwrap();
    assert!(csv.starts_with("path,time,state\n"));
    assert_eq!(csv.lines().filter(|l| l.contains(",0,")).count(), 5);
}

#[test]
fn plan_rejects_non_increasing_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write(dir.path(), "p.txt", "m0 = 1,0\nmT = 0.5,0.5\n");
    let o = mfgplan(&[
        "plan",
        "--model",
        "two-state",
        "--problem",
        &problem,
        "--schedule",
        "2,1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = mfgplan(&[
        "plan",
        "--model",
        "two-state",
        "--problem",
        &problem,
        "--set",
        "n_starts",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plan_solves_reachable_two_state_problem() {
    let dir = tempfile::tempdir().unwrap();
    // full-rate jumping for the whole horizon lands here
    let problem = write(
        dir.path(),
        "p.txt",
        "m0 = 1, 0\nmT = exp(-1), 1 - exp(-1)\nmu0 = 0.5, 0.5\n",
    );
    let out = dir.path().join("run");
    let v = json(&mfgplan(&[
        "plan",
        "--model",
        "two-state",
        "--steps",
        "100",
        "--problem",
        &problem,
        "--schedule",
        "1,2",
        "--set",
        "n_starts=2",
        "--out-dir",
        out.to_str().unwrap(),
    ]));
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for r in results {
        assert!(r["terminal_gap"].as_f64().unwrap() <= 1e-4);
        assert!(r["J"].as_f64().unwrap().abs() <= 1e-6, "{r}");
    }
    assert!(out.join("alpha1_strategy.csv").exists());
    assert!(out.join("report.json").exists());
}

#[test]
fn validate_prints_report() {
    let v = json(&mfgplan(&["validate", "--model", "section4", "--samples", "200"]));
    assert_eq!(v["kolmogorov_ok"], true);
}

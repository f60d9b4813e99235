use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use npi_core::covering::{CoverProblem, Threshold};
use npi_core::experiment::ExperimentConfig;
use npi_core::netgraph::{ClusterSet, Network};
use npi_core::npi::{NpiParams, Strategy};
use serde_json::Value;

fn cost_sweep() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/cost_sweep.json")
}

fn npi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npi"))
        .args(args)
        .output()
        .unwrap()
}

fn run(args: &[&str]) -> String {
    let out = npi(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(cost_sweep()).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("config.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let out = npi(&["generate", "--config", "/no/such/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/config.json"));
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["extra"] = Value::Bool(true));
    let out = npi(&["generate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(npi(&["plot"]).status.code(), Some(2));
}

#[test]
fn infeasible_instances_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| {
        v["npi"] = serde_json::json!({"theta1": 0.51, "theta2": 0.52});
        v["network"]["k"] = 10.into();
        v["thresholds"] = serde_json::json!([0.001]);
        v["max_regen"] = 1.into();
    });
    let out = npi(&["generate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn solver_iteration_cap_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["dynamics"]["max_iter"] = 2.into());
    let out = npi(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn generate_writes_instance_and_reports_feasibility() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run(&["generate", "--config", s(&cost_sweep()), "--out", s(dir.path())]);
    assert!(stdout.contains("threshold 0.05: ok"), "{stdout}");
    let net: Network =
        serde_json::from_str(&fs::read_to_string(dir.path().join("network.json")).unwrap())
            .unwrap();
    let cs: ClusterSet =
        serde_json::from_str(&fs::read_to_string(dir.path().join("clusters.json")).unwrap())
            .unwrap();
    assert_eq!((net.n(), net.num_edges(), cs.len()), (100, 200, 25));
}

#[test]
fn seed_override_changes_the_instance() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&["generate", "--config", s(&cost_sweep()), "--out", s(&a)]);
    run(&[
        "generate",
        "--config",
        s(&cost_sweep()),
        "--out",
        s(&b),
        "--seed",
        "99",
    ]);
    assert_ne!(
        fs::read(a.join("network.json")).unwrap(),
        fs::read(b.join("network.json")).unwrap()
    );
}

#[test]
fn optimize_writes_a_feasible_greedy_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst");
    let opt = dir.path().join("opt");
    run(&["generate", "--config", s(&cost_sweep()), "--out", s(&inst)]);
    let stdout = run(&[
        "optimize",
        "--config",
        s(&cost_sweep()),
        "--out",
        s(&opt),
        "--instance",
        s(&inst),
        "--threshold",
        "0.05",
    ]);
    assert!(stdout.contains("bound ratio"), "{stdout}");
    let doc = read_json(&opt.join("strategy.json"));
    assert_eq!(doc["jbar_final"], 0.0);
    let selected: Strategy = serde_json::from_value(doc["selected"].clone()).unwrap();

    let net: Network =
        serde_json::from_str(&fs::read_to_string(inst.join("network.json")).unwrap()).unwrap();
    let cs: ClusterSet =
        serde_json::from_str(&fs::read_to_string(inst.join("clusters.json")).unwrap()).unwrap();
    let params = NpiParams::new(0.7, 0.9).unwrap();
    let x_hat = Threshold::uniform(net.n(), 0.05).unwrap();
    let prob = CoverProblem::new(&net, &params, &cs, &x_hat).unwrap();
    assert_eq!(prob.j_bar(&selected), 0.0);

    let direct = dir.path().join("direct");
    run(&[
        "optimize",
        "--config",
        s(&cost_sweep()),
        "--out",
        s(&direct),
        "--threshold",
        "0.05",
    ]);
    assert_eq!(
        fs::read(opt.join("strategy.json")).unwrap(),
        fs::read(direct.join("strategy.json")).unwrap()
    );
}

#[test]
fn optimize_baseline_and_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run(&[
        "optimize",
        "--config",
        s(&cost_sweep()),
        "--out",
        s(dir.path()),
        "--baseline",
    ]);
    assert!(stdout.contains("baseline:"), "{stdout}");
    let doc = read_json(&dir.path().join("strategy.json"));
    assert_eq!(doc["method"], "baseline");
    assert_eq!(doc["jbar"], 0.0);

    let cfg = write_config(dir.path(), |v| {
        v["network"]["n"] = 40.into();
        v["clusters"] =
            serde_json::json!({"count": 10, "size_range": [4, 8], "cost_choices": [1, 2, 3, 4]});
        v["thresholds"] = serde_json::json!([0.2]);
        v["max_regen"] = 1000.into();
    });
    let bf = dir.path().join("bf");
    let stdout = run(&[
        "optimize",
        "--config",
        s(&cfg),
        "--out",
        s(&bf),
        "--brute-force",
    ]);
    let ratio: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("greedy / optimal = "))
        .expect("ratio line")
        .parse()
        .unwrap();
    let bound = read_json(&bf.join("strategy.json"))["bound_ratio"]
        .as_f64()
        .unwrap();
    assert!((1.0..=bound + 1e-9).contains(&ratio), "{ratio} vs {bound}");
    assert!(bf.join("optimal.json").is_file());
}

#[test]
fn simulate_with_a_saved_strategy_stays_under_target() {
    let dir = tempfile::tempdir().unwrap();
    let opt = dir.path().join("opt");
    let sim = dir.path().join("sim");
    run(&[
        "optimize",
        "--config",
        s(&cost_sweep()),
        "--out",
        s(&opt),
        "--threshold",
        "0.05",
    ]);
    let strategy = opt.join("strategy.json");
    run(&[
        "simulate",
        "--config",
        s(&cost_sweep()),
        "--out",
        s(&sim),
        "--threshold",
        "0.05",
        "--strategy",
        s(&strategy),
    ]);
    let csv = fs::read_to_string(sim.join("traj_npi.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("t,x_0,"));
    let last: Vec<f64> = lines
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(last[0], 200.0);
    assert!(last[1..].iter().all(|&x| x <= 0.05 + 1e-3));
    let steady = read_json(&sim.join("steady.json"));
    assert_eq!(steady["selected"], read_json(&strategy)["selected"]);
    assert!(steady["controlled"]["x_star"]
        .as_array()
        .unwrap()
        .iter()
        .all(|x| x.as_f64().unwrap() <= 0.05 + 1e-9));
    assert!(sim.join("traj_free.csv").is_file());
}

#[test]
fn dt_override_changes_the_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&["simulate", "--config", s(&cost_sweep()), "--out", s(&a)]);
    run(&[
        "simulate",
        "--config",
        s(&cost_sweep()),
        "--out",
        s(&b),
        "--dt",
        "0.02",
    ]);
    let first_times = |p: &Path| {
        fs::read_to_string(p.join("traj_free.csv"))
            .unwrap()
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .next()
            .unwrap()
            .to_string()
    };
    assert_ne!(first_times(&a), first_times(&b));
}

#[test]
fn sweep_emits_one_row_per_method_threshold_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run(&[
        "sweep",
        "--config",
        s(&cost_sweep()),
        "--out",
        s(dir.path()),
        "--jobs",
        "2",
    ]);
    assert!(stdout.contains("mean cost ratio"));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let cfg = ExperimentConfig::load(&cost_sweep()).unwrap();
    assert_eq!(
        csv.lines().count(),
        1 + 2 * cfg.thresholds.len() * cfg.seeds.len()
    );
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[6].is_empty(), fields[2] == "baseline");
    }
    let summary = read_json(&dir.path().join("sweep.json"));
    assert!(summary["mean_cost_ratio"].as_f64().unwrap() <= 0.6);
}

#[test]
fn quick_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let stdout = run(&["verify", "--quick", "--out", s(dir.path())]);
    assert!(start.elapsed().as_secs() < 60);
    assert!(stdout.contains("properties hold"), "{stdout}");
    assert!(!stdout.contains("FAIL"));
    let reports = read_json(&dir.path().join("verify.json"));
    assert!(reports
        .as_array()
        .unwrap()
        .iter()
        .all(|r| r["violations"] == 0));
}

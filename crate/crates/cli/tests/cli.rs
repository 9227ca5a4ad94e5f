use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fastslow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastslow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn network_file(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../networks")
        .join(format!("{name}.crn"))
        .to_string_lossy()
        .into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = fastslow(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_network_file_is_a_usage_error() {
    let out = fastslow(&["analyze", "no/such/file.crn"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_reports_the_chain_structure() {
    let out = fastslow(&["analyze", &network_file("chain")]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert_eq!(report["m"], 1);
    assert_eq!(report["m_fast"], 2);
    assert_eq!(
        report["structure"]["q_fast"],
        serde_json::json!([[1, 1, 1], [0, 0, 1]])
    );
    assert_eq!(report["valid"], true);
    assert!(report["fdb"]["x_star"].is_array());
}

#[test]
fn every_shipped_network_is_valid_and_only_the_inconsistent_cycle_lacks_fdb() {
    for name in [
        "chain",
        "binding",
        "cycle",
        "cycle_bad",
        "slow_pair",
        "exchange",
    ] {
        let out = fastslow(&["analyze", &network_file(name)]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        let report = json(&out);
        assert_eq!(report["valid"], true, "{name}");
        assert_eq!(
            report["invariant_failures"],
            serde_json::json!([]),
            "{name}"
        );
        assert_eq!(
            report["fdb"]["x_star"].is_null(),
            name == "cycle_bad",
            "{name}"
        );
    }
}

#[test]
fn reconstruction_outside_the_reachable_set_is_a_domain_error() {
    let out = fastslow(&["reconstruct", "chain", "--q", "1,2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("equilibria:"));
}

#[test]
fn reconstruct_returns_a_point_with_the_requested_coordinates() {
    let out = fastslow(&["reconstruct", "binding", "--q", "3,3,1"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    let x: Vec<f64> = serde_json::from_value(r["x"].clone()).unwrap();
    assert!((x[0] + x[2] + x[3] - 3.0).abs() < 1e-10);
    assert!((x[3] - 1.0).abs() < 1e-10);
}

#[test]
fn eval_along_the_flow_costs_nothing() {
    // The chain at x = (1, 1, 1) with ε = 1 moves with velocity (0, -1, 1).
    let out = fastslow(&[
        "eval", "chain", "--fn", "Leps", "--x", "1,1,1", "--v", "0,-1,1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["value"].as_f64().unwrap().abs() < 1e-10);
}

#[test]
fn simulate_is_deterministic_and_writes_the_declared_columns() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = fastslow(&[
            "simulate",
            "chain",
            "--eps",
            "0.01",
            "--x0",
            "2,0.5,0.5",
            "--t-final",
            "1",
            "--samples",
            "10",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().next().unwrap(), "t,A,B,C,q_1,q_2,defect");
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn sweep_reads_the_config_file_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "network = \"slow_pair\"\nt_final = 5.0\n[sweep]\neps = [1, 0.1]\nx_end = [1.3, 0.7]\nsteps = 8\nbox = \"0.2:2.2\"\n",
    )
    .unwrap();
    let out = fastslow(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--t-final",
        "0.5",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "eps,value,gap,fast_cost_share,iters,converged,recovery_value,recovery_gap,u_star"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn coarse_hje_writes_nodes_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = fastslow(&[
        "--out-dir",
        dir.path().to_str().unwrap(),
        "hje",
        "chain",
        "--mode",
        "coarse",
        "--box",
        "2.9:3.1,0.5:1.5",
        "--h",
        "0.1",
        "--u0",
        "quadratic:3,1",
        "--t-final",
        "0.1",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let diag = json(&out);
    assert_eq!(diag["mode"], "coarse");
    let nodes = std::fs::read_to_string(dir.path().join("hje.csv")).unwrap();
    assert_eq!(nodes.lines().next().unwrap(), "q_1,q_2,u");
    assert_eq!(
        nodes.lines().count(),
        1 + diag["nodes"].as_u64().unwrap() as usize
    );
}

#[test]
fn repro_subset_prints_a_summary() {
    let out = fastslow(&["repro", "--only", "1,2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("PASS [ 1]"));
    assert!(text.contains("2/2 criteria passed"));
}

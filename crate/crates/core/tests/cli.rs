//! End-to-end tests of the command-line binary: output shapes, exit codes,
//! and agreement between the solver and the brute-force cross-check.

use std::path::PathBuf;
use std::process::{Command, Output};

fn admpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_admpc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn temp_file(name: &str, text: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("admpc-cli-{}-{name}", std::process::id()));
    std::fs::write(&path, text).expect("temp file");
    path
}

#[test]
fn simulate_writes_a_full_csv_trace() {
    let out = admpc(&["simulate", "example1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    // Header, ten rounds, terminal row.
    assert_eq!(lines.len(), 12, "{text}");
    assert_eq!(lines[0], "k,x0,x1,u0,u1,objective,region,verdict,solve_ms");
    for (i, line) in lines[1..11].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 9, "{line}");
        assert_eq!(fields[0], i.to_string());
        assert_eq!(fields[7], "exact", "{line}");
        // Ten significant digits in scientific notation.
        assert!(fields[5].contains('e'), "{line}");
    }
    assert!(lines[11].starts_with("10,"), "{}", lines[11]);
    assert!(lines[11].ends_with(",,,,"), "{}", lines[11]);
}

#[test]
fn simulate_emits_json_when_asked() {
    let out = admpc(&["simulate", "example1", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid json");
    assert_eq!(doc["steps"].as_array().unwrap().len(), 10);
    assert!(doc["failure"].is_null());
    assert_eq!(doc["steps"][0]["certificate"]["exact"], true);
    assert_eq!(doc["terminal_state"].as_array().unwrap().len(), 2);
}

#[test]
fn out_flag_writes_the_file_instead_of_stdout() {
    let path = std::env::temp_dir().join(format!("admpc-cli-out-{}.csv", std::process::id()));
    let out = admpc(&["simulate", "example1", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let text = std::fs::read_to_string(&path).expect("output file");
    assert_eq!(text.lines().count(), 12);
    std::fs::remove_file(&path).ok();
}

#[test]
fn check_reports_the_detected_structure() {
    let out = admpc(&["check", "example1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("uniform sign vector: (+1, -1, +1, -1)"), "{text}");
    assert!(text.contains("inside the minus region"), "{text}");
    assert!(text.contains("check passed"), "{text}");

    let grid = stdout(&admpc(&["check", "microgrid"]));
    assert!(grid.contains("2 negative"), "{grid}");
    assert!(grid.contains("check passed"), "{grid}");
}

#[test]
fn solve_emits_a_certified_solution() {
    let out = admpc(&["solve", "example1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid json");
    assert_eq!(doc["certificate"]["exact"], true);
    assert_eq!(doc["region"], "minus");
    assert_eq!(doc["u"].as_array().unwrap().len(), 4);
    // Horizon 2 with two states: predicted x(0), x(1), x(2).
    assert_eq!(doc["predicted_states"].as_array().unwrap().len(), 3);
    let norm0: f64 = doc["u"][0].as_f64().unwrap().powi(2) + doc["u"][1].as_f64().unwrap().powi(2);
    assert!((0.2 - 1e-6..=0.5 + 1e-6).contains(&norm0), "{norm0}");
}

#[test]
fn oracle_and_solver_agree_on_the_first_builtin() {
    let solve: serde_json::Value =
        serde_json::from_str(&stdout(&admpc(&["solve", "example1"]))).expect("valid json");
    let oracle_out = admpc(&["oracle", "example1", "--jobs", "2"]);
    assert!(oracle_out.status.success(), "{}", stderr(&oracle_out));
    let oracle: serde_json::Value =
        serde_json::from_str(&stdout(&oracle_out)).expect("valid json");
    let a = solve["objective"].as_f64().unwrap();
    let b = oracle["objective"].as_f64().unwrap();
    assert!(
        (a - b).abs() <= 1e-3 * a.abs().max(1.0),
        "solver {a} vs grid search {b}"
    );
    // The grid point can only be worse (higher) than the certified minimum,
    // up to the solver's own tolerance.
    assert!(b >= a - 1e-6, "grid search beat the certified minimum");
    assert_eq!(oracle["best_u"].as_array().unwrap().len(), 4);
    assert_eq!(oracle["certified_bound"], false);
}

#[test]
fn discretize_matches_the_reference_values() {
    let out = admpc(&["discretize", "microgrid"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid json");
    let a_ref = [
        [0.6282, 0.2221, 0.1026],
        [0.2221, 0.4171, 0.3646],
        [0.1026, 0.3646, 0.5663],
    ];
    for (i, row) in a_ref.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let got = doc["a"][i][j].as_f64().unwrap();
            assert!((got - v).abs() <= 5e-5, "a[{i}][{j}] = {got} vs {v}");
        }
    }
    let b_ref = [[0.3941, 0.0213], [0.0716, 0.1266], [0.0213, 0.3616]];
    for (i, row) in b_ref.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let got = doc["b"][i][j].as_f64().unwrap();
            assert!((got - v).abs() <= 5e-5, "b[{i}][{j}] = {got} vs {v}");
        }
    }
}

#[test]
fn malformed_scenarios_exit_with_code_two() {
    let path = temp_file("garbage.toml", "horizon = \"ten\"\n");
    let out = admpc(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("scenario error"), "{}", stderr(&out));
    std::fs::remove_file(&path).ok();
}

#[test]
fn states_outside_both_regions_exit_with_code_four() {
    let text = include_str!("../../../scenarios/example1.toml")
        .replace("x0 = [0.0, 0.1]", "x0 = [1.0, 0.5]");
    let path = temp_file("far.toml", &text);
    let out = admpc(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("neither admissible region"),
        "{}",
        stderr(&out)
    );
    std::fs::remove_file(&path).ok();
}

#[test]
fn sign_conflicts_exit_with_code_three() {
    let text = "\
horizon = 1
x0 = [0.0]

[system.discrete]
a = [[1.0]]
b = [[1.0, 1.0]]

[objective]
control_cost = [[1.0, 0.0], [0.0, 1.0]]

[[constraints]]
control_cost = [[0.0, 1.0], [1.0, 0.0]]
sense = \"le\"
bound = 1.0

[[constraints]]
control_cost = [[0.0, -1.0], [-1.0, 0.0]]
sense = \"le\"
bound = 1.0
";
    let path = temp_file("conflict.toml", text);
    let out = admpc(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("no uniform sign vector"),
        "{}",
        stderr(&out)
    );
    // The partial report still lands on stdout.
    assert!(stdout(&out).contains("check failed"), "{}", stdout(&out));
    std::fs::remove_file(&path).ok();
}

#[test]
fn solver_overrides_are_honored() {
    // One iteration cannot reach optimality: the solver reports failure.
    let out = admpc(&["solve", "example1", "--max-iter", "1"]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
    assert!(stderr(&out).contains("cone solver"), "{}", stderr(&out));
}

#[test]
fn simulate_reports_a_failed_round_and_exits_nonzero() {
    let text = include_str!("../../../scenarios/example1.toml")
        .replace("x0 = [0.0, 0.1]", "x0 = [1.0, 0.5]");
    let path = temp_file("far-sim.toml", &text);
    let out = admpc(&["simulate", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid json");
    assert_eq!(doc["failure"]["step"], 0);
    assert_eq!(doc["steps"].as_array().unwrap().len(), 0);
    std::fs::remove_file(&path).ok();
}

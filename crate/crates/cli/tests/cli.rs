use std::process::{Command, Output};

use serde_json::Value;

fn enskog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enskog"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str::<Value>(line).expect("last stderr line is JSON")["error"].clone()
}

fn temp_path(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("enskog-cli-{}-{name}", std::process::id()))
}

#[test]
fn bounds_list_prints_four_constants_with_header() {
    let v = json(&enskog(&["bounds", "--list"]));
    assert_eq!(v["result"].as_object().unwrap().len(), 4);
    assert_eq!(
        v["result"]["bbgky_radius"].as_f64().unwrap(),
        (-1.0f64).exp()
    );
    let h = &v["header"];
    assert_eq!(h["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(h["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn bounds_report_for_small_norm() {
    let v = json(&enskog(&["bounds", "--s", "2", "--norm", "1e-4"]));
    assert_eq!(v["result"]["satisfied"], true);
    assert!(v["result"]["majorant"].as_f64().unwrap() > 0.0);
}

#[test]
fn partitions_report_zero_alternating_sums() {
    let v = json(&enskog(&["verify", "partitions", "--max-m", "8"]));
    let rows = v["result"].as_array().unwrap();
    let bell = [1, 2, 5, 15, 52, 203, 877, 4140];
    for (row, b) in rows.iter().zip(bell) {
        assert_eq!(row["bell"], b);
        if row["m"].as_u64().unwrap() >= 2 {
            assert_eq!(row["alternating_sum"], 0);
        }
    }
}

#[test]
fn recurrence_check_passes() {
    let v = json(&enskog(&[
        "verify",
        "recurrence",
        "--s",
        "2",
        "--n",
        "1",
        "--samples",
        "100",
        "--seed",
        "7",
    ]));
    assert!(v["result"]["max_residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(v["result"]["samples"], 100);
    assert_eq!(v["header"]["seed"], 7);
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let out = enskog(&["bounds", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(stderr_error(&out)["code"], "validation_error");
}

#[test]
fn monte_carlo_commands_require_a_seed() {
    let out = enskog(&["series", "--t", "0.5", "--points", "1,0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_error(&out)["message"]
        .as_str()
        .unwrap()
        .contains("--seed"));
}

#[test]
fn strict_guard_failure_exits_with_three() {
    let out = enskog(&[
        "series", "--t", "0.5", "--mass", "10", "--points", "1,0.5", "--seed", "1", "--strict",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["code"], "norm_guard");
    let relaxed = json(&enskog(&[
        "series",
        "--t",
        "0.5",
        "--mass",
        "10",
        "--points",
        "1,0.5",
        "--seed",
        "1",
        "--samples",
        "200",
    ]));
    assert!(relaxed["result"]["estimates"][0]["guard"]["warning"].is_string());
}

#[test]
fn output_is_independent_of_thread_count() {
    let args = [
        "series",
        "--t",
        "0.5",
        "--points",
        "1,0.5;5,-1",
        "--seed",
        "9",
        "--samples",
        "3000",
        "--order",
        "2",
    ];
    let one = enskog(&[&args[..], &["--threads", "1"]].concat());
    let four = enskog(&[&args[..], &["--threads", "4"]].concat());
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn series_histogram_csv_has_header_lines() {
    let path = temp_path("hist.csv");
    let out = enskog(&[
        "series",
        "--t",
        "0.5",
        "--bins",
        "-3:23:26",
        "--seed",
        "4",
        "--samples",
        "500",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# version="));
    assert!(lines.next().unwrap().starts_with("# config={"));
    assert!(lines.next().unwrap().starts_with("lo,hi,order_0"));
    assert_eq!(lines.count(), 26);
}

#[test]
fn simulate_reads_a_state_and_conserves_energy() {
    let path = temp_path("state.json");
    let state = r#"{"sigma": 0.5, "dim": 1, "points": [{"q": [0.0], "p": [1.0]}, {"q": [2.0], "p": [-1.0]}]}"#;
    std::fs::write(&path, state).unwrap();
    let v = json(&enskog(&[
        "simulate",
        "--state",
        path.to_str().unwrap(),
        "--t",
        "2",
    ]));
    std::fs::remove_file(&path).ok();
    let r = &v["result"];
    assert_eq!(r["collisions"].as_array().unwrap().len(), 1);
    assert_eq!(r["kinetic_energy"]["initial"], r["kinetic_energy"]["final"]);
    // the rods meet at 0.75 and swap momenta
    assert_eq!(
        r["final_state"]["points"][0]["q"][0].as_f64().unwrap(),
        -0.5
    );
}

#[test]
fn overlapping_state_is_rejected() {
    let path = temp_path("overlap.json");
    std::fs::write(&path, r#"{"sigma": 1.0, "dim": 1, "points": [{"q": [0.0], "p": [0.0]}, {"q": [0.5], "p": [0.0]}]}"#).unwrap();
    let out = enskog(&["simulate", "--state", path.to_str().unwrap(), "--t", "1"]);
    std::fs::remove_file(&path).ok();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn collision_integral_at_equilibrium_balances() {
    let v = json(&enskog(&[
        "collision-integral",
        "--kind",
        "bee",
        "--dim",
        "3",
        "--mass",
        "1",
        "--lo",
        "-5",
        "--hi",
        "5",
        "--sigma",
        "0.5",
        "--point",
        "0 0 0,0.3 -0.5 1",
        "--seed",
        "2",
        "--samples",
        "20000",
    ]));
    let r = &v["result"]["result"];
    assert!(
        r["value"].as_f64().unwrap().abs()
            <= 3.0 * r["std_error"].as_f64().unwrap() + 1e-12 * r["loss"].as_f64().unwrap()
    );
}

#[test]
fn config_file_supplies_defaults() {
    let path = temp_path("cfg.json");
    std::fs::write(
        &path,
        r#"{"t": 0.25, "seed": 5, "sigma": 0.1, "points": [{"q": [3.0], "p": [0.2]}]}"#,
    )
    .unwrap();
    let v = json(&enskog(&[
        "series",
        "--config",
        path.to_str().unwrap(),
        "--samples",
        "500",
    ]));
    std::fs::remove_file(&path).ok();
    assert_eq!(v["header"]["seed"], 5);
    assert_eq!(v["result"]["t"], 0.25);
}

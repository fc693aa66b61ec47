use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use surro2sp_core::alternating::{read_run_csv, stream_seed};
use surro2sp_core::encoder::PwlCost;
use surro2sp_core::grid::{parse_instance, GridOptions, GridProblem, CASE5_SYNTHETIC, TINY3};
use surro2sp_core::milp::MilpOptions;
use surro2sp_core::neural::Surrogate;
use surro2sp_core::two_stage::{value, EvalOptions, TwoStageProblem};
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surro2sp")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn instance(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 14] = [
    "--iters", "2", "--batch", "6", "--init-samples", "30", "--scenarios", "4", "--nn", "5,5", "--epochs",
    "40", "--retrain-epochs", "10",
];

fn run_small(inst: &Path, out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["run", "--instance", s(inst), "--out", s(out), "--seed", "9"];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args);
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_rereadable_artifacts() {
    let dir = TempDir::new().unwrap();
    let inst = instance(&dir, "tiny3.json", TINY3);
    let out = dir.path().join("runs");
    let m = run_small(&inst, &out, &[]);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["instance"]["sha256"], hex::encode(Sha256::digest(TINY3.as_bytes())));
    assert_eq!(m["config"]["iterations"], 2);
    assert!(m["finished_at"].is_string());
    for (k, mode) in ["alt", "base"].iter().enumerate() {
        assert_eq!(m["runs"][k]["mode"], *mode);
        let rows = read_run_csv(fs::File::open(out.join(format!("{mode}.csv"))).unwrap()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].n_points, 30 + 2 * 6);
        assert_eq!(m["runs"][k]["final_gap"].as_f64().unwrap(), rows[1].gap);
        let net = Surrogate::from_json(&fs::read_to_string(out.join(format!("{mode}_network.json"))).unwrap()).unwrap();
        assert_eq!(net.net.hidden_widths(), vec![5, 5]);
        assert_eq!(Surrogate::from_json(&net.to_json()).unwrap(), net);
    }
}

#[test]
fn eval_reproduces_the_final_sampled_objective() {
    let dir = TempDir::new().unwrap();
    let inst = instance(&dir, "tiny3.json", TINY3);
    let out = dir.path().join("runs");
    let m = run_small(&inst, &out, &["--mode", "alt"]);
    let x = serde_json::to_string(&m["runs"][0]["final_x"]).unwrap();
    let doc: Value = serde_json::from_str(&ok(&[
        "eval", "--instance", s(&inst), "--x", &x, "--scenarios", "4", "--seed", "9",
    ]))
    .unwrap();
    let want = m["runs"][0]["final_sampled_obj"].as_f64().unwrap();
    assert!((doc["sampled_obj"].as_f64().unwrap() - want).abs() <= 1e-9 * (1.0 + want.abs()));
    assert_eq!(doc["scenario_seed"], m["scenario_seed"]);
    // The x file written by the run is accepted as well.
    let from_file: Value = serde_json::from_str(&ok(&[
        "eval", "--instance", s(&inst), "--x", s(&out.join("alt_final_x.json")), "--scenarios", "4", "--seed", "9",
    ]))
    .unwrap();
    assert_eq!(from_file["sampled_obj"], doc["sampled_obj"]);
}

#[test]
fn eval_with_one_scenario_is_the_recourse_value() {
    let dir = TempDir::new().unwrap();
    let inst = instance(&dir, "tiny3.json", TINY3);
    let p = GridProblem::new(parse_instance(TINY3).unwrap(), GridOptions::default()).unwrap();
    let x = vec![30.0, 50.0, 0.0, 0.0];
    let mut x_full = x.clone();
    p.polytope().complete(&mut x_full);
    let arg = serde_json::to_string(&x_full).unwrap();
    let doc: Value =
        serde_json::from_str(&ok(&["eval", "--instance", s(&inst), "--x", &arg, "--scenarios", "1", "--seed", "4"]))
            .unwrap();
    let xi = p.sample_scenarios(1, stream_seed(4, "scenarios")).unwrap().remove(0);
    let q = value(&p, &x_full, &xi, &EvalOptions::default()).unwrap();
    assert_eq!(doc["expected_recourse"].as_f64().unwrap(), q);
}

#[test]
fn eval_names_the_violated_constraint() {
    let dir = TempDir::new().unwrap();
    let inst = instance(&dir, "tiny3.json", TINY3);
    let out = bin(&["eval", "--instance", s(&inst), "--x", "[90, 20, 0, 0]"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("P_G[0,0]"));
    let out = bin(&["eval", "--instance", s(&inst), "--x", "[20, 20, 10, 10]"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("market_clearing[0]"));
    let out = bin(&["eval", "--instance", s(&inst), "--x", "[20, 20]"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let inst = instance(&dir, "tiny3.json", TINY3);
    let out = dir.path().join("o");
    for extra in [&["--iters", "0"][..], &["--alpha", "1.2"], &["--nn", "4,0"], &["--mode", "sideways"], &["--threads", "0"]] {
        let mut args = vec!["run", "--instance", s(&inst), "--out", s(&out)];
        args.extend(extra);
        assert_eq!(bin(&args).status.code(), Some(2), "{extra:?}");
    }
    assert_eq!(bin(&["run", "--instance", "/nonexistent.json", "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn csv_bytes_do_not_depend_on_threads() {
    let dir = TempDir::new().unwrap();
    let inst = instance(&dir, "tiny3.json", TINY3);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_small(&inst, &a, &["--threads", "1", "--zero-timings"]);
    run_small(&inst, &b, &["--threads", "3", "--zero-timings"]);
    for f in ["alt.csv", "base.csv", "alt_network.json", "base_network.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn infeasible_recourse_aborts_with_exit_one() {
    let dir = TempDir::new().unwrap();
    let mut inst = parse_instance(TINY3).unwrap();
    inst.lines.iter_mut().for_each(|l| l.s_max = 1.0);
    let path = instance(&dir, "choked.json", &inst.to_json());
    let out = dir.path().join("o");
    let mut args = vec!["run", "--instance", s(&path), "--out", s(&out)];
    args.extend(SMALL);
    assert_eq!(bin(&args).status.code(), Some(1));
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("infeasible"));
    // The penalty keeps the run going.
    args.extend(["--penalty", "1e5"]);
    assert_eq!(bin(&args).status.code(), Some(0));
}

#[test]
fn detequiv_decomposes_on_tiny3() {
    let dir = TempDir::new().unwrap();
    let inst = instance(&dir, "tiny3.json", TINY3);
    let doc: Value = serde_json::from_str(&ok(&["detequiv", "--instance", s(&inst), "--scenarios", "3"])).unwrap();
    assert!(doc["residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(doc["binaries"], 12);
}

#[test]
fn single_scenario_detequiv_matches_a_grid_search() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("t1.json");
    ok(&["gen-instance", "--base", "tiny3", "--horizon", "1", "--out", s(&path)]);
    let doc: Value = serde_json::from_str(&ok(&[
        "detequiv", "--instance", s(&path), "--scenarios", "1", "--seed", "2", "--pwl-segments", "5",
    ]))
    .unwrap();
    let p = GridProblem::new(parse_instance(&fs::read_to_string(&path).unwrap()).unwrap(), GridOptions::default())
        .unwrap();
    let poly = p.polytope();
    assert_eq!(poly.free_indices(), vec![0]);
    let pwl = PwlCost::from_quadratic(p.first_stage_cost(), &poly.lower, &poly.upper, 5).unwrap();
    let xi = p.sample_scenarios(1, stream_seed(2, "scenarios")).unwrap().remove(0);
    let opts = EvalOptions { milp: MilpOptions { gap_tol: 1e-12, ..MilpOptions::default() }, penalty: None };
    let n = 700;
    let best = (0..=n)
        .map(|k| {
            let mut x = vec![poly.lower[0] + (poly.upper[0] - poly.lower[0]) * k as f64 / n as f64, 0.0];
            poly.complete(&mut x);
            pwl.evaluate(&x) + value(&p, &x, &xi, &opts).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    let obj = doc["objective"].as_f64().unwrap();
    assert!(obj <= best + 1e-6, "{obj} > {best}");
    assert!(best - obj <= 100.0 * (poly.upper[0] - poly.lower[0]) / n as f64, "{obj} vs {best}");
}

#[test]
fn detequiv_guard_refuses_large_models() {
    let dir = TempDir::new().unwrap();
    let inst = instance(&dir, "case5.json", CASE5_SYNTHETIC);
    let out = bin(&["detequiv", "--instance", s(&inst), "--scenarios", "400"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
}

#[test]
fn generated_instances_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("c.json");
    ok(&["gen-instance", "--horizon", "6", "--out", s(&path)]);
    let inst = parse_instance(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(inst, parse_instance(CASE5_SYNTHETIC).unwrap().truncated(6).unwrap());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddstab::experiment::adversarial_theta_input;
use ddstab::{run_experiment, ScalarQuadratic};
use tempfile::TempDir;

fn ddstab(args: &[&str]) -> Output {
    ddstab_env(args, &[])
}

fn ddstab_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ddstab"));
    cmd.args(args).env_remove("DDSTAB_SOLVER_TOL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `x+ = 1.2 x + u` driven by a fixed input sequence.
fn linear_scalar_csv() -> String {
    let us = [1.0, -0.7, 0.4, 0.9, -0.2, 0.5];
    let mut x = 0.3f64;
    let mut text = String::from("k,u_1,x_1\n");
    for (k, u) in us.iter().enumerate() {
        text += &format!("{k},{u},{x}\n");
        x = 1.2 * x + u;
    }
    text + &format!("{},,{x}\n", us.len())
}

fn adversarial_csv() -> String {
    let run = run_experiment(&ScalarQuadratic, &adversarial_theta_input(0.1f64), false).unwrap();
    let mut buf = Vec::new();
    ddstab::io::write_trajectory_csv(&run.trajectory, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

const LINEAR_SCALAR: &str = r#"{"kind": "linear", "A": [[1.2]], "B": [[1.0]]}"#;

#[test]
fn pe_check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let constant = write(&dir, "c.csv", "k,u_1\n0,1\n1,1\n2,1\n3,1\n4,1\n");
    assert_eq!(code(&ddstab(&["pe-check", "--data", s(&constant), "--order", "2"])), 2);
    let theta = write(&dir, "t.csv", "k,u_1\n0,0.1\n1,0.11\n2,0.1221\n");
    let out = ddstab(&["pe-check", "--data", s(&theta), "--order", "2"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["persistently_exciting"], true);
    let bad = write(&dir, "b.csv", "k,u_1\n0,abc\n");
    assert_eq!(code(&ddstab(&["pe-check", "--data", s(&bad), "--order", "1"])), 1);
}

#[test]
fn design_exit_codes() {
    let dir = TempDir::new().unwrap();
    let lin = write(&dir, "lin.csv", &linear_scalar_csv());
    let plant = write(&dir, "plant.json", LINEAR_SCALAR);
    let out = ddstab(&["design", "--data", s(&lin), "--plant", s(&plant), "--oracle"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let res: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(res["status"], "optimal");
    let k = res["K"][0][0].as_f64().unwrap();
    assert!((1.2 + k).abs() < 1.0);
    assert_eq!(res["certificate"]["gamma_condition_holds"], true);

    let adv = write(&dir, "adv.csv", &adversarial_csv());
    assert_eq!(code(&ddstab(&["design", "--data", s(&adv)])), 3);

    let empty = write(&dir, "empty.csv", "k,u_1,x_1\n");
    assert_eq!(code(&ddstab(&["design", "--data", s(&empty)])), 1);
}

#[test]
fn strict_rejects_heuristic_verdicts() {
    let dir = TempDir::new().unwrap();
    let lin = write(&dir, "lin.csv", &linear_scalar_csv());
    assert_eq!(code(&ddstab(&["design", "--data", s(&lin)])), 0);
    assert_eq!(code(&ddstab(&["design", "--data", s(&lin), "--strict"])), 3);
    assert_eq!(code(&ddstab(&["certify", "--data", s(&lin), "--strict"])), 3);
    assert_eq!(code(&ddstab(&["sweep", "--data-only", "--strict", "--no-timestamp"])), 4);
}

#[test]
fn failures_leave_no_output_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep.csv");
    assert_eq!(code(&ddstab(&["sweep", "--eps", "0.1,1", "--out", s(&out)])), 1);
    assert!(!out.exists());
    let bad = write(&dir, "bad.csv", "k,u_1,x_1\n0,1,nan\n1,,2\n");
    let out = dir.path().join("design.json");
    assert_eq!(code(&ddstab(&["design", "--data", s(&bad), "--out", s(&out)])), 1);
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1, "stray temporary files");
}

#[test]
fn linear_plant_sweep_reproduces_reference() {
    let dir = TempDir::new().unwrap();
    let plant = write(&dir, "plant.json", r#"{"kind": "linear", "A": [[1.0, 0.1], [0.0, 1.05]], "B": [[0.0], [0.1]]}"#);
    let out = ddstab(&["sweep", "--plant", s(&plant), "--eps", "1,0.1,0.01", "--T", "8", "--no-timestamp"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert!(rec[col("K_dist")].parse::<f64>().unwrap() < 1e-4);
        assert!(rec[col("alpha_dist")].parse::<f64>().unwrap() <= 1e-6);
        assert_eq!(&rec[col("stability_achieved")], "YES");
        rows += 1;
    }
    assert_eq!(rows, 3);
}

#[test]
fn solver_tolerance_from_environment() {
    let dir = TempDir::new().unwrap();
    let lin = write(&dir, "lin.csv", &linear_scalar_csv());
    let iterations = |out: Output| {
        assert_eq!(code(&out), 0);
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["solver_iterations"].as_u64().unwrap()
    };
    let default = iterations(ddstab(&["design", "--data", s(&lin)]));
    let loose = iterations(ddstab_env(&["design", "--data", s(&lin)], &[("DDSTAB_SOLVER_TOL", "1e-3")]));
    assert!(loose < default, "{loose} vs {default}");
    let flag = iterations(ddstab_env(
        &["design", "--data", s(&lin), "--solver-tol", "1e-8"],
        &[("DDSTAB_SOLVER_TOL", "1e-3")],
    ));
    assert_eq!(flag, default);
}

#[test]
fn sweep_timestamp_line() {
    let out = ddstab(&["sweep", "--eps", "1,0.5"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# generated "));
    assert!(lines.next().unwrap().starts_with("epsilon,K_dist,alpha_dist,"));
}

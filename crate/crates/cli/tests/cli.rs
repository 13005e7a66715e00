use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use trimdr::did_inference::{did_estimate, DidOptions};
use trimdr::numkit::RngStream;
use trimdr::simulation::{generate, Dgp, DgpConfig};

fn trimdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trimdr")).args(args).env("TRIMDR_THREADS", "1").output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn hand_two_by_two_file() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "hand.csv", "y0,y1,d\n0,3,1\n0,5,1\n0,1,0\n0,1,0\n");
    let out = trimdr(&["estimate", "--input", &input]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["theta_hat"], 3.0);
    assert_eq!(v["n"], 4);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["K"], 3);
    assert_eq!(v["diagnostics"]["input"]["rows"], 4);

    let table = trimdr(&["estimate", "--input", &input, "--format", "table"]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("theta_hat     3"));
    let csv = trimdr(&["estimate", "--input", &input, "--format", "csv"]);
    assert!(String::from_utf8_lossy(&csv.stdout).starts_with("estimand,theta_hat,se"));
}

#[test]
fn non_binary_treatment_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "bad.csv", "y0,y1,d,x1\n0,3,1,0.5\n0,5,2,0.1\n0,1,0,0.3\n");
    let out = trimdr(&["estimate", "--input", &input]);
    assert_eq!(out.status.code(), Some(3));
    let v = json(&out);
    assert_eq!(v["error"]["kind"], "schema");
    assert_eq!(v["error"]["line"], 3);
    assert_eq!(v["error"]["column"], "d");

    let missing = write(&dir, "missing.csv", "y,d\n1,0\n");
    let out = trimdr(&["estimate", "--input", &missing]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["error"]["column"], "y0");

    let text = write(&dir, "text.csv", "y,d\n1,0\nabc,1\n");
    let out = trimdr(&["estimate", "--estimand", "ate", "--input", &text]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["error"]["column"], "y");
}

#[test]
fn unreadable_path_reports_error_json() {
    let out = trimdr(&["estimate", "--input", "/nonexistent/data.csv"]);
    assert!(!out.status.success());
    assert_eq!(json(&out)["error"]["kind"], "config");
}

#[test]
fn invalid_configuration_exits_with_two() {
    assert_eq!(trimdr(&["simulate", "--reps", "0", "--dgp", "1"]).status.code(), Some(2));
    assert_eq!(trimdr(&["simulate", "--reps", "1", "--dgp", "4"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "hand.csv", "y0,y1,d\n0,3,1\n0,5,1\n0,1,0\n0,1,0\n");
    let out = trimdr(&["estimate", "--input", &input, "--K", "2", "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["error"]["kind"], "config");
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let p = path.to_str().unwrap();
        let out = trimdr(&["simulate", "--dgp", "1,2", "--reps", "10", "--n", "200", "--seed", "7", "--output", p]);
        assert!(out.status.success());
        std::fs::read(&path).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
    let table = trimdr(&["simulate", "--dgp", "1,2", "--reps", "5", "--n", "200", "--format", "table"]);
    let text = String::from_utf8_lossy(&table.stdout);
    for row in ["BIAS", "SD", "RMSE", "95%", "CON", "NEW", "DGP1", "DGP2"] {
        assert!(text.contains(row), "{text}");
    }
}

#[test]
fn simulate_coverage_in_band() {
    let out = trimdr(&["simulate", "--dgp", "1", "--df", "30", "--n", "500", "--reps", "200", "--seed", "1"]);
    assert!(out.status.success());
    let v = json(&out);
    let cells = v["reports"][0]["cells"].as_array().unwrap();
    let new = cells.iter().find(|c| c["method"] == "NEW").unwrap();
    let coverage = new["coverage"].as_f64().unwrap();
    assert!((0.85..=0.98).contains(&coverage), "coverage {coverage}");
}

fn csv_path(dir: &TempDir) -> String {
    let path = dir.path().join("dgp1.csv");
    let p = path.to_str().unwrap().to_string();
    let out = trimdr(&["generate", "--dgp", "1", "--n", "500", "--seed", "3", "--stream", "2", "--output", &p]);
    assert!(out.status.success());
    p
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let path = csv_path(&dir);
    let out = trimdr(&["estimate", "--input", &path]);
    assert!(out.status.success());
    let v = json(&out);

    let cfg = DgpConfig::new(Dgp::Dgp1, 30, 500).unwrap();
    let sample = generate(&cfg, &mut RngStream::new(3, 2)).unwrap();
    let direct = did_estimate(&sample, &DidOptions::default()).unwrap();
    assert_eq!(v["theta_hat"].as_f64().unwrap().to_bits(), direct.theta.to_bits());
    assert_eq!(v["se"].as_f64().unwrap().to_bits(), direct.se.to_bits());
    assert!(Path::new(&path).exists());
}

#[test]
fn inactive_trimming_matches_untrimmed_point_estimate() {
    // Covariate-free design: every fitted score equals the treated share.
    let dir = TempDir::new().unwrap();
    let mut text = String::from("y0,y1,d\n");
    let mut rng = RngStream::new(11, 0);
    for i in 0..300 {
        let d = u8::from(i % 3 == 0);
        let y0 = rng.normal();
        let _ = std::fmt::Write::write_fmt(&mut text, format_args!("{y0},{},{d}\n", y0 + rng.normal()));
    }
    let input = write(&dir, "flat.csv", &text);
    let zero = json(&trimdr(&["estimate", "--input", &input, "--h", "0"]));
    let trimmed = json(&trimdr(&["estimate", "--input", &input, "--h", "0.01"]));
    assert_eq!(zero["trimmed_count"], 0);
    assert_eq!(trimmed["trimmed_count"], 0);
    assert_eq!(zero["theta_hat"], trimmed["theta_hat"]);
    assert_eq!(zero["n"], trimmed["n"]);
    let (a, b) = (zero["se"].as_f64().unwrap(), trimmed["se"].as_f64().unwrap());
    // h > 0 differentiates a kernel-smoothed moment, which carries an O(b²)
    // smoothing error relative to the exact gradient used at h = 0.
    assert!((a / b - 1.0).abs() < 1e-3, "{a} vs {b}");
    assert_ne!(zero["h"], trimmed["h"]);
}

#[test]
fn ate_and_late_estimands() {
    let dir = TempDir::new().unwrap();
    let ate =
        write(&dir, "ate.csv", "y,d,x1\n1,1,0.2\n3,1,0.5\n2,1,-0.4\n0,0,0.1\n1,0,-0.3\n2,0,0.6\n4,1,0.0\n0,0,0.9\n");
    let out = trimdr(&["estimate", "--estimand", "ate", "--input", &ate]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(json(&out)["method_flags"]["experimental_se"], false);

    let late = write(&dir, "late.csv", "y,d,z\n4,1,1\n2,1,1\n3,1,1\n1,0,1\n0,1,0\n2,0,0\n1,0,0\n0,0,0\n");
    let out = trimdr(&["estimate", "--estimand", "late", "--input", &late]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["theta_hat"].as_f64().unwrap() - 3.5).abs() < 1e-10);
    assert_eq!(v["method_flags"]["experimental_se"], true);
}

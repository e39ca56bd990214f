mod common;

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canon-lattice")).args(args).output().expect("binary runs")
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cli(&args)
}

#[test]
fn passing_run_writes_summary_manifest_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run("free-energy", &common::config_path("gaussian_band.toml"), &out, &["--n-list", "16,32,64"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    assert_eq!(summary(&out)["passed"], true);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["engine"], "oracle");
    assert_eq!(manifest["seed"], 20_240_601);
    assert!(manifest["model_hash"].as_str().unwrap().chars().all(|c| c.is_ascii_hexdigit()));
    assert!(manifest["engine_versions"]["transfer_engine"].is_string());
    assert_eq!(manifest["n_list"], serde_json::json!([16, 32, 64]));

    let csv = std::fs::read_to_string(out.join("free_energy.csv")).unwrap();
    let first = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    let mantissa = first.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17, "{first}");
    for name in manifest["outputs"].as_object().unwrap().keys() {
        assert!(out.join(name).exists());
    }
}

#[test]
fn tolerance_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tight.toml");
    let text = common::config_text("gaussian_band.toml") + "\n[experiment.bands]\noracle_free_energy_ratio = [2.5, 3.0]\n";
    std::fs::write(&config, text).unwrap();
    let out = dir.path().join("run");
    let o = run("free-energy", &config, &out, &["--n-list", "16,32"]);
    assert_eq!(o.status.code(), Some(2));
    let s = summary(&out);
    assert_eq!(s["passed"], false);
    let failing: Vec<_> = s["checks"].as_array().unwrap().iter().filter(|c| c["passed"] == false).collect();
    assert_eq!(failing.len(), 1);
    assert!(failing[0]["name"].as_str().unwrap().contains("gap ratio"));
}

#[test]
fn configuration_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // transfer engine needs a nearest-neighbour model
    let out = dir.path().join("nn");
    let o = run("free-energy", &common::config_path("gaussian_band.toml"), &out, &["--engine", "transfer"]);
    assert_eq!(o.status.code(), Some(3));
    let s = summary(&out);
    assert_eq!(s["configuration_error"], true);
    assert!(s["error"].is_string());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[potential]\nkind = \"cosine\"\nbeta = -1.0\nomega = 1.0\n").unwrap();
    let o = run("oracle-check", &bad, &dir.path().join("bad"), &[]);
    assert_eq!(o.status.code(), Some(3));

    let o = run("oracle-check", &dir.path().join("missing.toml"), &dir.path().join("missing"), &[]);
    assert_eq!(o.status.code(), Some(3));

    // the double well has no closed form
    let o = run("oracle-check", &common::config_path("reference_nn.toml"), &dir.path().join("dw"), &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn replay_reproduces_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run("correlation-equivalence", &common::config_path("reference_nn.toml"), &out, &["--n-list", "8,16"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let manifest = out.join("manifest.json");
    let o = cli(&["replay", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("byte-identically"));
    for name in ["correlation_gaps.csv", "ce_curve_n16.csv"] {
        assert_eq!(
            std::fs::read(out.join(name)).unwrap(),
            std::fs::read(out.join("replay").join(name)).unwrap()
        );
    }

    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m["outputs"]["correlation_gaps.csv"] = serde_json::json!("0".repeat(64));
    let forged = dir.path().join("forged.json");
    std::fs::write(&forged, serde_json::to_string(&m).unwrap()).unwrap();
    let o = cli(&["replay", "--manifest", forged.to_str().unwrap(), "--out", dir.path().join("r2").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("correlation_gaps.csv"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use modeshift::data::write_dataset;
use modeshift::synth::{generate_population, DgpConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modeshift"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_population(cfg: &DgpConfig, path: &Path) {
    let pop = generate_population(cfg).unwrap();
    let mut buf = Vec::new();
    write_dataset(&pop.dataset, &mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, "num_trees = 200\nbootstrap_replications = 49\n").unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn report_is_bit_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_population(&DgpConfig::calibrated(1200, 8), &data);
    let cfg = small_config(dir.path());
    let mut outputs = Vec::new();
    for (k, workers) in ["1", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = run(&["run", "--input", s(&data), "--config", &cfg, "--out", s(&out), "--seed", "11", "--workers", workers, "--trim"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(out);
    }
    for name in ["report.json", "balance.csv", "overlap.svg", "cates.svg"] {
        let a = fs::read(outputs[0].join(name)).unwrap();
        for o in &outputs[1..] {
            assert_eq!(a, fs::read(o.join(name)).unwrap(), "{name} differs");
        }
    }
}

#[test]
fn schema_violation_exits_2_without_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "id,informed,used_pt\nx,1,0\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["run", "--input", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("report.json").exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_population(&DgpConfig::calibrated(100, 1), &data);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "num_tress = 10\n").unwrap();
    let o = run(&["run", "--input", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimation_failure_exits_3_without_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut cfg = DgpConfig::calibrated(200, 1);
    cfg.treatment.intercept = 60.0;
    cfg.treatment.terms.clear();
    write_population(&cfg, &data);
    let out = dir.path().join("out");
    let o = run(&["run", "--input", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn drop_log_reconciles_with_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut pop = generate_population(&DgpConfig::calibrated(900, 4)).unwrap().dataset;
    let mut recs = pop.records().to_vec();
    for (i, r) in recs.iter_mut().enumerate() {
        match i % 10 {
            0 => r.length_of_stay = 2,
            1 => r.ga_travelcard = true,
            2 => r.distance_car_km = 450.0,
            3 => r.age = None,
            _ => {}
        }
    }
    pop = modeshift::Dataset::new(recs, "x").unwrap();
    let data = dir.path().join("data.csv");
    let mut buf = Vec::new();
    write_dataset(&pop, &mut buf).unwrap();
    fs::write(&data, buf).unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = run(&["run", "--input", s(&data), "--config", &cfg, "--out", s(&out), "--method", "psm"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let sample = &r["sample"];
    let dropped: u64 = sample["log"]["counts"].as_array().unwrap().iter().map(|c| c["dropped"].as_u64().unwrap()).sum();
    assert_eq!(sample["input_count"].as_u64(), Some(900));
    assert_eq!(sample["retained"].as_u64().unwrap() + dropped, 900);
    assert_eq!(dropped, 360);
    for e in r["estimates"].as_array().unwrap() {
        assert!(e["seed"].is_u64());
        assert_eq!(e["n_used"].as_u64(), Some(540));
    }
}

#[test]
fn randomized_oracle_run_recovers_effect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_population(&DgpConfig::randomized(0.15, 4000, 2024), &data);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "num_trees = 500\nbootstrap_replications = 99\nstability = false\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["run", "--input", s(&data), "--config", s(&cfg), "--out", s(&out), "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let mut seen = 0;
    for e in r["estimates"].as_array().unwrap() {
        if e["estimand"] == "ATE" {
            let v = e["estimate"].as_f64().unwrap();
            assert!((v - 0.15).abs() <= 0.04, "{} {v}", e["method"]);
            seen += 1;
        }
    }
    assert_eq!(seen, 2);
}

#[test]
fn simulate_writes_data_and_separate_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = run(&["simulate", "--preset", "two-group", "--n", "300", "--effect", "0.3", "--seed", "2", "--out", s(&out)]);
    assert!(o.status.success());
    let data = fs::read_to_string(out.join("data.csv")).unwrap();
    assert!(!data.lines().next().unwrap().contains("y1"));
    assert_eq!(data.lines().count(), 301);
    let oracle = fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert!(oracle.starts_with("id,y0,y1"));
}

#[test]
fn impact_subcommand_reports_policy_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("impact");
    let o = run(&["impact", "--ate", "0.116", "--out", s(&out)]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&fs::read(out.join("impact.json")).unwrap()).unwrap();
    assert!((v["savings_kg_per_switcher"].as_f64().unwrap() - 57.2).abs() < 0.05);
    assert!((v["attributed_share"].as_f64().unwrap() - 0.281).abs() < 0.001);
}

#[test]
fn subcommands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_population(&DgpConfig::calibrated(600, 9), &data);
    let cfg = small_config(dir.path());
    for (cmd, file) in [
        ("filter", "filtered.csv"),
        ("describe", "descriptives.json"),
        ("estimate", "estimates.json"),
        ("balance", "balance.csv"),
        ("overlap", "overlap.svg"),
        ("stability", "stability.json"),
        ("impute", "imputed_1.csv"),
    ] {
        let out = dir.path().join(cmd);
        let o = run(&[cmd, "--input", s(&data), "--config", &cfg, "--out", s(&out)]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).exists(), "{cmd} did not write {file}");
    }
}

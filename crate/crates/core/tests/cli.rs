use std::path::{Path, PathBuf};
use std::process::Command;

use sea_thermo::cli::{self, Format, OutputOptions, Status};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sea-cli-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn short(name: &str) -> cli::ScenarioConfig {
    let mut cfg = cli::preset(name).unwrap();
    cfg.run.t_end = cfg.run.t_end.min(1.0);
    cfg
}

fn sea(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sea")).args(args).env("SEA_OUT_DIR", out).output().unwrap()
}

#[test]
fn every_preset_parses_and_builds() {
    for p in cli::PRESETS {
        let cfg = cli::parse_config(p.source).unwrap_or_else(|e| panic!("{}: {e}", p.name));
        assert_eq!(cfg.name, p.name);
        assert!(!cfg.description.is_empty());
        cli::build(&cfg, None).unwrap_or_else(|e| panic!("{}: {e}", p.name));
    }
}

#[test]
fn presets_round_trip_through_run_outputs() {
    let dir = scratch("roundtrip");
    for p in cli::PRESETS {
        let cfg = short(p.name);
        let opts = OutputOptions { out_dir: Some(dir.clone()), format: Some(Format::Csv) };
        let out = cli::cmd_run(&cfg, None, &opts).unwrap();
        let csv = std::fs::read_to_string(dir.join(format!("{}.csv", p.name))).unwrap();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header[..3], ["t", "entropy", "energy"]);
        let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect()).collect();
        assert_eq!(rows.len(), out.trajectory.samples.len());
        assert!(rows.iter().all(|r| r.len() == header.len()));
        for (row, s) in rows.iter().zip(&out.trajectory.samples) {
            assert_eq!(row[0], s.t);
            assert_eq!(row[1], s.entropy);
        }
        let composite = header.contains(&"sigma_ab");
        assert_eq!(composite, out.summary.composite, "{}", p.name);

        let summary = std::fs::read_to_string(dir.join(format!("{}.summary.json", p.name))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
        assert_eq!(v["name"], p.name);
        assert_eq!(v["steps"].as_u64().unwrap() as usize, out.summary.steps);
        assert_eq!(v["terminal_entropy"].as_f64().unwrap(), out.summary.terminal_entropy);
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn json_trajectory_matches_samples() {
    let dir = scratch("json");
    let cfg = short("qubit-coherence");
    let opts = OutputOptions { out_dir: Some(dir.clone()), format: Some(Format::Json) };
    let out = cli::cmd_run(&cfg, None, &opts).unwrap();
    let text = std::fs::read_to_string(dir.join("qubit-coherence.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = v["samples"].as_array().unwrap();
    assert_eq!(rows.len(), out.trajectory.samples.len());
    for col in v["columns"].as_array().unwrap() {
        assert!(rows[0].get(col.as_str().unwrap()).is_some());
    }
    assert_eq!(rows[0]["entropy"].as_f64().unwrap(), out.trajectory.samples[0].entropy);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn csv_is_deterministic_for_a_seed() {
    let src = r#"
name = "random-start"
seed = 17

[system]
hamiltonian = { diag = [0.0, 0.4, 1.1, 2.0] }

[initial]
kind = "random"
rank = 3

[run]
dt = 0.02
t_end = 0.5
sample_interval = 0.1
"#;
    let cfg = cli::parse_config(src).unwrap();
    let read = |dir: &Path| std::fs::read(dir.join("random-start.csv")).unwrap();
    let (a, b, c) = (scratch("det-a"), scratch("det-b"), scratch("det-c"));
    cli::cmd_run(&cfg, None, &OutputOptions { out_dir: Some(a.clone()), format: None }).unwrap();
    cli::cmd_run(&cfg, None, &OutputOptions { out_dir: Some(b.clone()), format: None }).unwrap();
    cli::cmd_run(&cfg, Some(18), &OutputOptions { out_dir: Some(c.clone()), format: None }).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    for d in [a, b, c] {
        let _ = std::fs::remove_dir_all(d);
    }
}

#[test]
fn gibbs_preset_stays_put() {
    let dir = scratch("gibbs");
    let out =
        cli::cmd_run(&cli::preset("gibbs").unwrap(), None, &OutputOptions { out_dir: Some(dir.clone()), format: None })
            .unwrap();
    let first = out.trajectory.first();
    for s in &out.trajectory.samples {
        assert!((s.entropy - first.entropy).abs() < 1e-12);
        assert!(sea_thermo::op_space::max_abs(&(&s.rho - &first.rho)) < 1e-12);
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn check_passes_on_the_coupled_pair() {
    let report = cli::cmd_check(&cli::preset("two-qubit-correlated").unwrap(), None).unwrap();
    assert!(report.failed().is_empty(), "{:?}", report.criteria);
    assert_eq!(report.criterion(4).unwrap().status, Status::ProbeOnly);
    for id in [1, 2, 3, 5, 6, 7, 8] {
        assert_eq!(report.criterion(id).unwrap().status, Status::Pass, "criterion {id}");
    }
}

#[test]
fn check_flags_separate_energy_for_the_variant() {
    let report = cli::cmd_check(&cli::preset("sqrt-perception-variant").unwrap(), None).unwrap();
    assert_eq!(report.criterion(6).unwrap().status, Status::Fail);
    for id in [1, 2, 3, 5] {
        assert_eq!(report.criterion(id).unwrap().status, Status::Pass, "criterion {id}");
    }
}

#[test]
fn binary_lists_presets() {
    let dir = scratch("bin-list");
    let out = sea(&["presets", "list"], &dir);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for p in cli::PRESETS {
        assert!(text.contains(p.name));
    }
}

#[test]
fn binary_run_writes_into_env_dir() {
    let dir = scratch("bin-run");
    let out = sea(&["--preset", "qubit-coherence", "run"], &dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("qubit-coherence.csv").exists());
    assert!(dir.join("qubit-coherence.summary.json").exists());
    let out = sea(&["--preset", "qubit-coherence", "--format", "json", "run"], &dir);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.join("qubit-coherence.json").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn binary_reports_config_errors_with_exit_2() {
    let dir = scratch("bin-config");
    let path = dir.join("bad.toml");
    std::fs::write(
        &path,
        r#"
[system]
hamiltonian = [[[0.0, 0.0], [1.0, 0.5]], [[1.0, 0.5], [1.0, 0.0]]]

[initial]
kind = "gibbs"
beta = 1.0
"#,
    )
    .unwrap();
    let out = sea(&["--config", path.to_str().unwrap(), "run"], &dir);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["field"], "system.hamiltonian");

    std::fs::write(&path, "[system\nhamiltonian = 3").unwrap();
    assert_eq!(sea(&["--config", path.to_str().unwrap(), "run"], &dir).status.code(), Some(2));
    assert_eq!(sea(&["--preset", "no-such-preset", "run"], &dir).status.code(), Some(2));
    assert_eq!(sea(&["run"], &dir).status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn binary_check_exit_codes() {
    let dir = scratch("bin-check");
    let ok = sea(&["--preset", "qubit-coherence", "check"], &dir);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = sea(&["--preset", "sqrt-perception-variant", "check"], &dir);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("sqrt-perception-variant.check.json")).unwrap())
            .unwrap();
    assert!(report["criteria"].as_array().unwrap().iter().any(|c| c["id"] == 6 && c["status"] == "fail"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn onsager_orthogonal_extension_block() {
    let mut cfg = cli::preset("qutrit-diagonal").unwrap();
    cfg.onsager.basis = cli::BasisChoice::OrthogonalExtension;
    let report = cli::cmd_onsager(&cfg, None).unwrap();
    let v = serde_json::to_value(&report).unwrap();
    assert!(v["extension_block_defect"].as_f64().unwrap() < 1e-9);
}

#[test]
fn sweep_runs_every_value() {
    let dir = scratch("sweep");
    let mut cfg = short("qutrit-diagonal");
    cfg.sweep = Some(cli::SweepBlock { parameter: cli::SweepParameter::Tau, values: vec![0.5, 1.0, 2.0] });
    let report = cli::cmd_sweep(&cfg, &OutputOptions { out_dir: Some(dir.clone()), format: None }).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| r.ok));
    assert!(dir.join("qutrit-diagonal.sweep.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn binary_reports_invariant_breach_with_exit_1() {
    let dir = scratch("bin-breach");
    let path = dir.join("coarse.toml");
    let base = r#"
name = "coarse"
[system]
hamiltonian = { diag = [0.0, 1.0, 2.0] }
[initial]
kind = "matrix"
rho = { diag = [0.9, 0.09, 0.01] }
[tau]
policies = [{ kind = "constant", value = 0.05 }]
[run]
dt = 0.5
t_end = 5.0
"#;
    // step far beyond the relaxation time: clipping breaks energy conservation
    std::fs::write(&path, format!("{base}halt_at_equilibrium = false\n")).unwrap();
    let out = sea(&["--config", path.to_str().unwrap(), "run"], &dir);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("energy"));
    // without projection the state leaves the positive cone
    std::fs::write(&path, format!("{base}projection = \"none\"\n")).unwrap();
    let out = sea(&["--config", path.to_str().unwrap(), "run"], &dir);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("positivity"));
    let _ = std::fs::remove_dir_all(&dir);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use plateau::flux::smaller_root;
use plateau::renorm::{build_scales, RenormParams};

fn plateau(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plateau"))
        .args(args)
        .current_dir(dir)
        .env_remove("PLATEAU_SEED")
        .env_remove("PLATEAU_CONFIG")
        .env_remove("PLATEAU_OUT")
        .env_remove("PLATEAU_WORKERS")
        .env_remove("PLATEAU_PLOT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_FLUX: &str = r#"{"command":"flux-curve","master_seed":3,"params":{
    "disorder":{"r":0.2,"R":0.2,"epsilon":0.3,"q_kind":"point_mass_at_r","seed":1},
    "densities":[0.1,0.3,0.5,0.7,0.9],"len":128,"t_max":200.0,"replicas":2}}"#;

#[test]
fn renorm_first_row_is_smaller_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = plateau(&["renorm", "--out", "o", "--plot"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("o/renorm.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    let rho_col = header.iter().position(|h| h == "rho_plus").unwrap();
    let first = reader.records().next().unwrap().unwrap();
    let rho: f64 = first[rho_col].parse().unwrap();
    let j2 = build_scales(&RenormParams::default(), 8).unwrap().level(2).j;
    assert!((rho - smaller_root(j2)).abs() < 1e-7);
    assert!(dir.path().join("o/renorm.svg").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/renorm.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "renorm");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flux.json", SMALL_FLUX);
    for out in ["a", "b"] {
        let o = plateau(&["flux-curve", "--config", &cfg, "--out", out, "--workers", "1"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = plateau(&["flux-curve", "--config", &cfg, "--out", "c", "--seed", "4"], dir.path());
    assert!(o.status.success());
    let read = |d: &str| fs::read(dir.path().join(d).join("flux_curve.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flux.json", SMALL_FLUX);
    assert!(plateau(&["flux-curve", "--config", &cfg, "--out", "run"], dir.path()).status.success());
    let o = plateau(&["replay", "run/flux-curve.manifest.json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("identical flux_curve.csv"));
    assert_eq!(
        fs::read(dir.path().join("run/flux_curve.csv")).unwrap(),
        fs::read(dir.path().join("run/replay/flux_curve.csv")).unwrap()
    );
}

#[test]
fn flat_segment_reads_flux_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("rho,flux,stderr\n");
    for k in 0..=20 {
        let rho = f64::from(k) / 20.0;
        csv += &format!("{rho},{},0.001\n", (rho * (1.0 - rho)).min(0.05));
    }
    let input = write(dir.path(), "curve.csv", &csv);
    let cfg = write(
        dir.path(),
        "flat.json",
        &format!(r#"{{"command":"flat-segment","params":{{"input":"{input}","r":0.2,"band":0.005}}}}"#),
    );
    let o = plateau(&["flat-segment", "--config", &cfg, "--out", "o"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("o/flat_segment.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let rho_c: f64 = row[0].parse().unwrap();
    assert!(rho_c > 0.0 && rho_c < 0.15);
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = plateau(&["verify", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_gamma = write(dir.path(), "g.json", r#"{"command":"renorm","params":{"params":{"gamma":0.9}}}"#);
    let o = plateau(&["renorm", "--config", &bad_gamma, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));

    let typo = write(dir.path(), "t.json", r#"{"command":"renorm","params":{"nmax":3}}"#);
    let o = plateau(&["renorm", "--config", &typo, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nmax"));

    let o = plateau(&["shape", "--config", &bad_gamma, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let regime = write(dir.path(), "r.json", r#"{"command":"renorm","params":{"params":{"r":1.0},"n_max":3}}"#);
    let o = plateau(&["renorm", "--config", &regime, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let budget = write(dir.path(), "b.json", r#"{"command":"shape","params":{"n":500,"cell_budget":10}}"#);
    let o = plateau(&["shape", "--config", &budget, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(4));

    assert_eq!(plateau(&["no-such-command"], dir.path()).status.code(), Some(2));
    let leftovers = fs::read_dir(dir.path().join("o")).map(|d| d.count()).unwrap_or(0);
    assert_eq!(leftovers, 0);
}

#[test]
fn seed_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_plateau"))
        .args(["verify", "--out", "o"])
        .current_dir(dir.path())
        .env("PLATEAU_SEED", "99")
        .output()
        .unwrap();
    assert!(o.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/verify.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 99);
}

#[test]
fn default_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = plateau(&["default-config", "dilute-scan"], dir.path());
    assert!(o.status.success());
    let cfg = write(dir.path(), "d.json", &String::from_utf8_lossy(&o.stdout));
    let o = plateau(&["dilute-scan", "--config", &cfg, "--out", "o"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

use std::path::Path;
use std::process::Command;

use fiberhom::config::{Experiment, ExperimentConfig};
use fiberhom::output::{format_calibration, parse_calibration, Table};
use fiberhom_core::bessel::{BoundId, Calibration};

fn fiberhom(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fiberhom")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_runs_are_byte_identical_and_tagged() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = fiberhom(&["bessel", "--out", d.path().to_str().unwrap(), "--seed", "7"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files = csv_files(a.path());
    assert!(!files.is_empty());
    assert_eq!(files, csv_files(b.path()));
    let mut cfg = ExperimentConfig::canonical(Experiment::Bessel);
    cfg.seed = 7;
    let hash = cfg.short_hash();
    for f in &files {
        let text = read(a.path(), f);
        assert_eq!(text, read(b.path(), f), "{f} differs between runs");
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(&rdr.headers().unwrap()[0], "config_hash");
        for r in rdr.records() {
            assert_eq!(&r.unwrap()[0], hash);
        }
    }
    assert_eq!(read(a.path(), "calibration.txt"), read(b.path(), "calibration.txt"));
    let cals = parse_calibration(&read(a.path(), "calibration.txt")).unwrap();
    assert_eq!(cals.iter().map(|c| c.id).collect::<Vec<_>>(), BoundId::all().to_vec());

    let manifest: serde_json::Value = serde_json::from_str(&read(a.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["pass"], true);
    let back = ExperimentConfig::from_toml(&read(a.path(), "config.toml")).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_file_is_honoured_and_invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::canonical(Experiment::Modal);
    cfg.probe.tau = 0.5;
    let path = dir.path().join("modal.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let out = fiberhom(&["modal", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau-too-small"));
    assert!(!dir.path().join("o").exists());

    let out = fiberhom(&["bessel", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn canonical_subcommand_prints_loadable_toml() {
    let out = fiberhom(&["canonical", "defect"]);
    assert!(out.status.success());
    let cfg = ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::canonical(Experiment::Defect));
}

#[test]
fn calibration_round_trip() {
    let cals = vec![
        Calibration { id: BoundId::K0Log, constant: 0.913_414_408_035_833_4, grid: vec![0.1, 1.0, 10.0] },
        Calibration { id: BoundId::ExteriorDecay, constant: 1.0 / 3.0, grid: vec![3.0] },
    ];
    let parsed = parse_calibration(&format_calibration(&cals)).unwrap();
    assert_eq!(parsed.len(), 2);
    for (p, c) in parsed.iter().zip(&cals) {
        assert_eq!(p.id, c.id);
        assert_eq!(p.constant, c.constant);
        assert_eq!(p.grid_hash.len(), 64);
    }
    assert_ne!(parsed[0].grid_hash, parsed[1].grid_hash);
    assert!(parse_calibration("k0-log 1.0").is_err());
    assert!(parse_calibration("not-a-bound 1.0 abc").is_err());
    assert!(parse_calibration("# only a comment\n\n").unwrap().is_empty());
}

#[test]
fn table_writes_hash_first() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Table::new("demo", &["a", "b"]);
    t.push(vec!["1".into(), "x".into()]);
    t.push(vec!["2".into(), "y".into()]);
    assert_eq!(t.column("b").unwrap(), vec!["x", "y"]);
    assert!(t.column("c").is_none());
    let p = t.write(dir.path(), "abc").unwrap();
    assert_eq!(std::fs::read_to_string(p).unwrap(), "config_hash,a,b\nabc,1,x\nabc,2,y\n");
}

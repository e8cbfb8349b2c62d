use fiberhom::config::{validate, DefectConfig, Experiment, ExperimentConfig};

const ALL: [Experiment; 9] = [
    Experiment::Homogenize,
    Experiment::Modal,
    Experiment::Corrector,
    Experiment::Blowup,
    Experiment::Supest,
    Experiment::Counterexample,
    Experiment::Sobolev,
    Experiment::Bessel,
    Experiment::Defect,
];

fn codes(cfg: &ExperimentConfig) -> Vec<&'static str> {
    validate(cfg).into_iter().map(|v| v.code).collect()
}

#[test]
fn canonical_configs_are_valid() {
    for e in ALL {
        let cfg = ExperimentConfig::canonical(e);
        assert!(validate(&cfg).is_empty(), "{}: {:?}", e.name(), validate(&cfg));
    }
}

#[test]
fn toml_round_trip_preserves_config_and_hash() {
    for e in ALL {
        let cfg = ExperimentConfig::canonical(e);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        assert!(cfg.hash().starts_with(&cfg.short_hash()));
    }
    let a = ExperimentConfig::canonical(Experiment::Bessel);
    let mut b = a.clone();
    b.seed = 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn unknown_keys_are_rejected() {
    let mut text = ExperimentConfig::canonical(Experiment::Sobolev).to_toml();
    text = text.replace("[tolerances]", "[tolerances]\nbogus = 1");
    assert!(ExperimentConfig::from_toml(&text).is_err());
}

#[test]
fn modal_tau_threshold() {
    let mut cfg = ExperimentConfig::canonical(Experiment::Modal);
    cfg.probe.tau = 0.5;
    assert!(codes(&cfg).contains(&"tau-too-small"));
    cfg.probe.tau = 1.0;
    let c = codes(&cfg);
    assert!(!c.contains(&"tau-too-small") && c.contains(&"sigma-below-tau"));
    cfg.probe.tau = 0.6;
    cfg.probe.eta = 1.0;
    assert!(codes(&cfg).contains(&"eta-out-of-range"));
    cfg.probe.eta = 0.1;
    cfg.probe.nu = 0.0;
    assert_eq!(codes(&cfg), vec!["nu-out-of-range"]);
}

#[test]
fn modal_buffer_must_be_reachable() {
    // above the threshold at eta = 0.8 but farther than any point gets from the fibers
    let mut cfg = ExperimentConfig::canonical(Experiment::Modal);
    cfg.probe.eta = 0.8;
    cfg.probe.tau = 0.95;
    assert_eq!(codes(&cfg), vec!["buffer-empty"]);
    cfg.probe.tau = 0.66;
    cfg.probe.eta = 0.1;
    assert_eq!(codes(&cfg), vec!["buffer-empty"]);
    cfg.probe.tau = 0.65;
    assert!(codes(&cfg).is_empty());
}

#[test]
fn defect_checks() {
    let mut cfg = ExperimentConfig::canonical(Experiment::Defect);
    cfg.defect = None;
    assert!(codes(&cfg).contains(&"defect-missing"));
    let mut cfg = ExperimentConfig::canonical(Experiment::Defect);
    cfg.sweep.gamma1.clear();
    assert!(codes(&cfg).contains(&"defect-missing"));
    // touching the fiber centred at the origin
    let mut cfg = ExperimentConfig::canonical(Experiment::Defect);
    cfg.defect = Some(DefectConfig { x1: 0.0, l: 0.25 });
    assert!(codes(&cfg).contains(&"defect-outside-buffer"));
}

#[test]
fn geometry_checks() {
    let mut cfg = ExperimentConfig::canonical(Experiment::Homogenize);
    cfg.regime.omega0 = [-0.5, 0.5, -0.5, 0.5];
    assert!(!validate(&cfg).is_empty());
    let mut cfg = ExperimentConfig::canonical(Experiment::Homogenize);
    cfg.grid.h = Some(0.01);
    assert!(codes(&cfg).contains(&"fibers-unresolved"));
    let mut cfg = ExperimentConfig::canonical(Experiment::Homogenize);
    cfg.regime.r_eps = Some(0.6);
    assert!(!validate(&cfg).is_empty());
}

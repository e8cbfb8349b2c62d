//! End-to-end acceptance checks, one test per criterion.
//!
//! Each test prints a single `criterion N: PASS|FAIL` line straight to stdout so the summary
//! survives output capture. Tests hold a global lock, so wall times are not inflated by
//! neighbours.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use fiberhom::config::{validate, BoundaryKind, Experiment, ExperimentConfig, PinModeConfig};
use fiberhom::experiments::{self, BlowupRecord, CorrectorRow, DefectSweep};
use fiberhom_core::geometry::{Polynomial, Rect};
use fiberhom_core::homogenized::{fixed_point_crosscheck, laplace_reference, max_difference, solve_homogenized};
use fiberhom_core::linalg::SolverOptions;
use fiberhom_core::mesh::{Grid2, Grid3, Uniform};
use fiberhom_core::weighted2d::{assemble_modal, solve, ModalRhs};

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn valid(cfg: &ExperimentConfig) {
    let v = validate(cfg);
    assert!(v.is_empty(), "configuration rejected: {v:?}");
}

/// `gamma` for which `r_eps = 1/20` at `eps = 1/4`.
fn sweep_gamma() -> f64 {
    2.0 * PI / (0.0625 * 20f64.ln())
}

fn with_gamma(exp: Experiment, eps: f64, gamma: f64, half: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::canonical(exp);
    c.regime.epsilon = eps;
    c.regime.pin_mode = PinModeConfig::Gamma;
    c.regime.gamma = Some(gamma);
    c.regime.r_eps = None;
    c.regime.omega = [-half, half, -half, half];
    c.grid.h = None;
    c.grid.cells_per_radius = Some(4.0);
    c.sweep.omega0_blocks = Some(1);
    c
}

#[test]
fn criterion_01_exact_solution() {
    let _g = serial();
    let t = Instant::now();
    let mut cfg = ExperimentConfig::canonical(Experiment::Homogenize);
    cfg.boundary.kind = BoundaryKind::X3;
    valid(&cfg);
    let (rec, _) = experiments::homogenize(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let tol = 10.0 * cfg.tolerances.solver;
    let dev = rec.exact_deviation.expect("x3 data is exact");
    let pass = rec.corrector_energy <= tol && dev <= tol && secs <= 120.0;
    report(1, pass, format!("E = {:.3e}, max|U - x3| = {dev:.3e} (limit {tol:.0e}), {secs:.1} s", rec.corrector_energy));
    assert!(pass);
}

fn manufactured_error(n: usize) -> f64 {
    let grid = Grid2::new(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), n, n).unwrap();
    let exact = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let lambda = 1.0;
    let f = move |x: [f64; 2]| (2.0 * PI * PI + lambda) * exact(x);
    let rhs = ModalRhs { f: Some(&f), ..Default::default() };
    let sys = assemble_modal(&grid, &Uniform(1.0), lambda, &rhs).unwrap();
    let sol = solve(&sys, &SolverOptions::with_tol(1e-12)).unwrap();
    let mut e: f64 = 0.0;
    for j in 0..=n {
        for i in 0..=n {
            e = e.max((sol.field.at(i, j) - exact(grid.node(i, j))).abs());
        }
    }
    e
}

#[test]
fn criterion_02_manufactured_convergence() {
    let _g = serial();
    let t = Instant::now();
    let (e1, e2) = (manufactured_error(64), manufactured_error(128));
    let ratio = e1 / e2;
    let secs = t.elapsed().as_secs_f64();
    let pass = (3.2..=4.8).contains(&ratio) && secs <= 60.0;
    report(2, pass, format!("error ratio h -> h/2 = {ratio:.3} ({e1:.3e} -> {e2:.3e}), {secs:.1} s"));
    assert!(pass);
}

#[test]
fn criterion_03_homogenized_crosscheck() {
    let _g = serial();
    let t = Instant::now();
    let cfg = ExperimentConfig::canonical(Experiment::Homogenize);
    let regime = cfg.regime.regime().unwrap();
    let omega0 = cfg.regime.omega0().unwrap();
    let plane = Grid2::new(cfg.regime.omega().unwrap(), 64, 64).unwrap();
    let grid = Grid3::new(plane, cfg.grid.half_height, 32).unwrap();
    let tol = 1e-10;
    let opts = SolverOptions::with_tol(tol);
    let mut gaps = Vec::new();
    for phi in [Polynomial::x1_squared(), Polynomial::coordinate(0)] {
        let modal = solve_homogenized(&phi, regime.kappa, regime.gamma, &omega0, &grid, None, &opts).unwrap();
        let fp = fixed_point_crosscheck(&phi, regime.kappa, regime.gamma, &omega0, &grid, tol, 1.0, 500).unwrap();
        gaps.push(max_difference(&modal.w, &fp.w).max(max_difference(&modal.v, &fp.v)));
    }
    let phi = Polynomial::x1_squared();
    let near_zero = solve_homogenized(&phi, regime.kappa, 1e-9, &omega0, &grid, None, &opts).unwrap();
    let laplace = laplace_reference(&phi, &grid, &opts).unwrap();
    let rel = max_difference(&near_zero.w, &laplace) / laplace.max_abs();
    let secs = t.elapsed().as_secs_f64();
    let pass = gaps.iter().all(|g| *g <= 10.0 * tol) && rel <= 1e-6 && secs <= 300.0;
    report(
        3,
        pass,
        format!("modal vs fixed point {:.2e} (x1^2), {:.2e} (x1), limit {:.0e}; gamma -> 0 vs Laplace {rel:.2e}; {secs:.1} s", gaps[0], gaps[1], 10.0 * tol),
    );
    assert!(pass);
}

struct CorrectorRun {
    rows: Vec<CorrectorRow>,
    blowup: BlowupRecord,
    blowup_secs: f64,
}

fn corrector_run() -> &'static CorrectorRun {
    static RUN: OnceLock<CorrectorRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut cfg = with_gamma(Experiment::Corrector, 0.25, sweep_gamma(), 0.7);
        cfg.grid.nz = 32;
        cfg.tolerances.solver = 1e-8;
        cfg.sweep.epsilons = vec![0.35, 0.3, 0.25];
        valid(&cfg);
        let mut rows = Vec::new();
        let mut last = None;
        for &e in &cfg.sweep.epsilons {
            let (row, s, w, pair) = experiments::corrector_row(&cfg, e).unwrap();
            rows.push(row);
            last = Some((s, w, pair));
        }
        let t = Instant::now();
        let (s, w, pair) = last.unwrap();
        let p = &cfg.probe;
        let blowup = experiments::blowup_from(&s, &w, &pair, p.p, p.rho, p.z_extent).unwrap();
        // the finest solve is part of the blow-up cost
        let blowup_secs = t.elapsed().as_secs_f64() + rows.last().unwrap().seconds;
        CorrectorRun { rows, blowup, blowup_secs }
    })
}

#[test]
fn criterion_04_corrector_convergence() {
    let _g = serial();
    let run = corrector_run();
    let secs: f64 = run.rows.iter().map(|r| r.seconds).sum();
    let energies: Vec<String> = run.rows.iter().map(|r| format!("{}: {:.4e}", r.epsilon, r.corrector_energy)).collect();
    let pass = experiments::corrector_trend(&run.rows) && secs <= 1200.0;
    report(4, pass, format!("E_eps {}; {secs:.1} s", energies.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_05_blowup_lower_bound() {
    let _g = serial();
    let b = &corrector_run().blowup;
    let pass = b.pass() && corrector_run().blowup_secs <= 600.0;
    report(
        5,
        pass,
        format!(
            "eps = {}: functional {:.4e} >= bound {:.4e} (density {:.4e}, C1 {:.3}); {:.1} s",
            b.epsilon,
            b.functional,
            b.bound,
            b.density,
            b.c1,
            corrector_run().blowup_secs
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_counterexample() {
    let _g = serial();
    let t = Instant::now();
    let mut cfg = with_gamma(Experiment::Counterexample, 0.5, 10.0, 1.0);
    cfg.sweep.lambdas = vec![1.0];
    valid(&cfg);
    let (rows, out) = experiments::counterexample(&cfg).unwrap();
    let r = &rows[0];
    let secs = t.elapsed().as_secs_f64();
    let pass = out.pass && secs <= 120.0;
    report(6, pass, format!("eps ||phi||_inf = {:.4e} >= 0.9 x {:.4e}; {secs:.1} s", r.measured, r.lower_bound));
    assert!(pass);
}

#[test]
fn criterion_07_sup_estimate_scaling() {
    let _g = serial();
    let t = Instant::now();
    let mut cfg = with_gamma(Experiment::Supest, 0.25, sweep_gamma(), 0.7);
    cfg.sweep.epsilons = vec![0.35, 0.3, 0.25];
    cfg.sweep.lambdas = vec![1.0, 10.0, 100.0];
    valid(&cfg);
    let (table, _) = experiments::supest(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = table.rows.len() == 9 && table.spread() <= 10.0 && secs <= 600.0;
    report(7, pass, format!("{} products, max/min = {:.3}; {secs:.1} s", table.rows.len(), table.spread()));
    assert!(pass);
}

#[test]
fn criterion_08_sobolev_band() {
    let _g = serial();
    let t = Instant::now();
    let mut cfg = with_gamma(Experiment::Sobolev, 0.5, 10.0, 1.0);
    cfg.sweep.epsilons = vec![0.5, 0.35, 0.25];
    valid(&cfg);
    let (rows, out) = experiments::sobolev(&cfg).unwrap();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let band = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let secs = t.elapsed().as_secs_f64();
    let pass = out.pass && band <= 4.0 && secs <= 180.0;
    report(8, pass, format!("ratios {ratios:.4?}, max/min = {band:.3}; {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_09_bessel_suite() {
    let _g = serial();
    let t = Instant::now();
    let mut cfg = ExperimentConfig::canonical(Experiment::Bessel);
    cfg.sweep.omega0_blocks = Some(1);
    cfg.sweep.lambdas = vec![10.0];
    valid(&cfg);
    let b = experiments::bessel_checks(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let checks = b.checks();
    let pass = checks.iter().all(|c| c.3) && secs <= 180.0;
    let detail: Vec<String> = checks.iter().map(|(n, v, bound, ok)| format!("{n} {v:.3e}/{bound:.3e} {}", if *ok { "ok" } else { "x" })).collect();
    report(9, pass, format!("{}; {} probe points; {secs:.1} s", detail.join(", "), b.layer_probe_points));
    assert!(pass);
}

struct DefectRun {
    sweep: DefectSweep,
    secs: f64,
}

fn defect_config() -> ExperimentConfig {
    ExperimentConfig::canonical(Experiment::Defect)
}

fn defect_run() -> &'static DefectRun {
    static RUN: OnceLock<DefectRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = defect_config();
        valid(&cfg);
        let t = Instant::now();
        let (sweep, _) = experiments::defect_sweep(&cfg).unwrap();
        DefectRun { sweep, secs: t.elapsed().as_secs_f64() }
    })
}

#[test]
fn criterion_10_polarization_tensor() {
    let _g = serial();
    let run = defect_run();
    let mut lines = Vec::new();
    let mut pass = run.secs <= 900.0;
    for r in &run.sweep.rows {
        pass &= r.tensor_pass();
        lines.push(format!(
            "g1 {} |G| {:.2e}: eig M* {:.3?} in [0, {:.3}], eig M {:.3?} in [{:.2}, {:.2}], asym {:.1e}, |A-B| {:.2e}, energy gap {:.2e}",
            r.gamma1,
            r.volume,
            r.m_star_eigenvalues,
            r.m_star_bounds.1,
            r.m_eigenvalues,
            r.m_bounds.0,
            r.m_bounds.1,
            r.asymmetry,
            r.estimator_gap,
            r.energy_gap()
        ));
    }
    report(10, pass, format!("{:.1} s\n  {}", run.secs, lines.join("\n  ")));
    assert!(pass);
}

#[test]
fn criterion_11_defect_asymptotics() {
    let _g = serial();
    let run = defect_run();
    let mut lines = Vec::new();
    let mut pass = run.secs <= 1800.0;
    for &(g, grad, l2) in &run.sweep.exponents {
        let rows: Vec<_> = run.sweep.rows.iter().filter(|r| r.gamma1 == g).collect();
        let ok = experiments::asymptotics_pass(&rows, grad, l2);
        pass &= ok;
        let gaps: Vec<String> = rows.iter().map(|r| format!("{:.2e}", r.rel_gap)).collect();
        lines.push(format!(
            "g1 {g}: rel_gap [{}] (non-increasing, last <= 0.15), exponents grad {grad:.3} (0.5 +- 0.15), L2 {l2:.3} (>= 0.6): {}",
            gaps.join(", "),
            if ok { "ok" } else { "x" }
        ));
    }
    report(11, pass, format!("{:.1} s\n  {}", run.secs, lines.join("\n  ")));
    assert!(pass);
}

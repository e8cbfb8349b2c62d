//! Experiment configuration: TOML schema, canonical defaults, hashing and validation.

use std::path::Path;

use fiberhom_core::defect::BUFFER_EXPONENT;
use fiberhom_core::fourier::tau_threshold;
use fiberhom_core::geometry::{FiberLattice, PinMode, Polynomial, Rect, ScalingRegime};
use fiberhom_core::weighted2d::MIN_CELLS_PER_RADIUS;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Homogenize,
    Modal,
    Corrector,
    Blowup,
    Supest,
    Counterexample,
    Sobolev,
    Bessel,
    Defect,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Homogenize => "homogenize",
            Experiment::Modal => "modal",
            Experiment::Corrector => "corrector",
            Experiment::Blowup => "blowup",
            Experiment::Supest => "supest",
            Experiment::Counterexample => "counterexample",
            Experiment::Sobolev => "sobolev",
            Experiment::Bessel => "bessel",
            Experiment::Defect => "defect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PinModeConfig {
    Gamma,
    Radius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub epsilon: f64,
    pub kappa: f64,
    pub pin_mode: PinModeConfig,
    /// Used when `pin_mode = "gamma"`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Used when `pin_mode = "radius"`.
    #[serde(default)]
    pub r_eps: Option<f64>,
    #[serde(default = "one")]
    pub sigma: f64,
    /// `[x0, x1, y0, y1]`.
    pub omega: [f64; 4],
    pub omega0: [f64; 4],
}

fn one() -> f64 {
    1.0
}

impl RegimeConfig {
    pub fn regime(&self) -> fiberhom_core::Result<ScalingRegime> {
        self.regime_at(self.epsilon)
    }

    /// The regime at another `epsilon`, keeping the pinned quantity.
    pub fn regime_at(&self, epsilon: f64) -> fiberhom_core::Result<ScalingRegime> {
        match self.pin_mode {
            PinModeConfig::Gamma => {
                let g = self.gamma.ok_or_else(|| fiberhom_core::Error::InvalidInput("pin_mode = gamma needs gamma".into()))?;
                ScalingRegime::with_gamma(epsilon, self.kappa, g, self.sigma)
            }
            PinModeConfig::Radius => {
                let r = self.r_eps.ok_or_else(|| fiberhom_core::Error::InvalidInput("pin_mode = radius needs r_eps".into()))?;
                ScalingRegime::with_radius(epsilon, self.kappa, r, self.sigma)
            }
        }
    }

    pub fn omega(&self) -> fiberhom_core::Result<Rect> {
        let [a, b, c, d] = self.omega;
        Rect::new(a, b, c, d)
    }

    pub fn omega0(&self) -> fiberhom_core::Result<Rect> {
        let [a, b, c, d] = self.omega0;
        Rect::new(a, b, c, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_height: f64,
    /// Planar spacing is `fiber radius / cells_per_radius` unless `h` is given.
    #[serde(default)]
    pub cells_per_radius: Option<f64>,
    #[serde(default)]
    pub h: Option<f64>,
    pub nz: usize,
    #[serde(default = "default_sub")]
    pub subsamples: usize,
}

fn default_sub() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Const,
    X1,
    X3,
    X1sq,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub kind: BoundaryKind,
    #[serde(default)]
    pub value: Option<f64>,
    /// `(coefficient, [p1, p2, p3])` monomials for `kind = "polynomial"`.
    #[serde(default)]
    pub terms: Vec<(f64, [u32; 3])>,
}

impl BoundaryConfig {
    pub fn polynomial(&self) -> Polynomial {
        match self.kind {
            BoundaryKind::Const => Polynomial::constant(self.value.unwrap_or(1.0)),
            BoundaryKind::X1 => Polynomial::coordinate(0),
            BoundaryKind::X3 => Polynomial::coordinate(2),
            BoundaryKind::X1sq => Polynomial::x1_squared(),
            BoundaryKind::Polynomial => Polynomial::new(self.terms.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub gamma1: Vec<f64>,
    /// Defect boxes in grid cells `[nx, ny, nz]`, largest first.
    #[serde(default)]
    pub defect_cells: Vec<[usize; 3]>,
    /// When set, `omega0` at each swept `epsilon` is the union of the `(2M+1)^2` lattice cells
    /// around the origin.
    #[serde(default)]
    pub omega0_blocks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "d_p")]
    pub p: f64,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_s")]
    pub s: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_nu")]
    pub nu: f64,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_modes")]
    pub n_modes: usize,
    #[serde(default = "d_pairs")]
    pub pairs: usize,
    /// Blow-up region height `|x3| <= z_extent`.
    #[serde(default = "d_z")]
    pub z_extent: f64,
}

fn d_p() -> f64 {
    4.0
}
fn d_rho() -> f64 {
    0.5
}
fn d_alpha() -> f64 {
    1.5
}
fn d_beta() -> f64 {
    0.2
}
fn d_s() -> f64 {
    4.0
}
fn d_tau() -> f64 {
    0.5
}
fn d_nu() -> f64 {
    0.5
}
fn d_eta() -> f64 {
    0.8
}
fn d_modes() -> usize {
    16
}
fn d_pairs() -> usize {
    1000
}
fn d_z() -> f64 {
    0.25
}

impl Default for ProbeConfig {
    fn default() -> Self {
        toml::from_str("").expect("probe defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectConfig {
    /// Lower `x1` edge of the defect box; the box is centred at `x2 = x3 = 0`.
    pub x1: f64,
    /// `|x3| <= l` confinement.
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "d_tol")]
    pub solver: f64,
}

fn d_tol() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { solver: d_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    pub regime: RegimeConfig,
    pub grid: GridConfig,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub defect: Option<DefectConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    /// Canonical desk-scale configuration: `eps = 0.25`, `r_eps = 0.05`, `kappa = 1`; sweeps run
    /// `eps = 0.35, 0.3, 0.25` with `gamma` pinned to the value giving `r_eps = 0.05` at `eps = 0.25`.
    pub fn canonical(experiment: Experiment) -> Self {
        let mut cfg = ExperimentConfig {
            experiment,
            seed: 0,
            out: None,
            regime: RegimeConfig {
                epsilon: 0.25,
                kappa: 1.0,
                pin_mode: PinModeConfig::Radius,
                gamma: None,
                r_eps: Some(0.05),
                sigma: 1.0,
                omega: [-0.4, 0.4, -0.4, 0.4],
                omega0: [-0.375, 0.375, -0.375, 0.375],
            },
            grid: GridConfig { half_height: 0.5, cells_per_radius: None, h: Some(0.8 / 256.0), nz: 64, subsamples: 8 },
            boundary: BoundaryConfig { kind: BoundaryKind::X1sq, value: None, terms: Vec::new() },
            sweep: SweepConfig::default(),
            probe: ProbeConfig {
                // tau must exceed eps^((1-eta)/(2(1+eta))) = 0.567 yet stay below 1/sqrt 2 - r_eps = 0.657,
                // the largest distance to a fiber in units of eps
                tau: if experiment == Experiment::Modal { 0.6 } else { d_tau() },
                eta: if experiment == Experiment::Modal { 0.1 } else { d_eta() },
                ..ProbeConfig::default()
            },
            defect: None,
            tolerances: Tolerances::default(),
        };
        if matches!(experiment, Experiment::Corrector | Experiment::Blowup | Experiment::Supest) {
            // gamma pinned so that r_eps = 0.05 at eps = 0.25, omega0 the 3x3 cells around the origin
            cfg.regime.pin_mode = PinModeConfig::Gamma;
            cfg.regime.gamma = Some(2.0 * std::f64::consts::PI / (0.0625 * 20f64.ln()));
            cfg.regime.r_eps = None;
            cfg.regime.omega = [-0.7, 0.7, -0.7, 0.7];
            cfg.grid.h = None;
            cfg.grid.cells_per_radius = Some(4.0);
            cfg.sweep.epsilons = vec![0.35, 0.3, 0.25];
            cfg.sweep.omega0_blocks = Some(1);
        }
        if experiment == Experiment::Supest {
            cfg.sweep.lambdas = vec![1.0, 10.0, 100.0];
        }
        if experiment == Experiment::Sobolev {
            cfg.regime.pin_mode = PinModeConfig::Gamma;
            cfg.regime.gamma = Some(10.0);
            cfg.regime.r_eps = None;
            cfg.regime.omega = [-1.0, 1.0, -1.0, 1.0];
            cfg.grid.h = None;
            cfg.grid.cells_per_radius = Some(4.0);
            cfg.sweep.epsilons = vec![0.5, 0.35, 0.25];
            cfg.sweep.omega0_blocks = Some(1);
        }
        if experiment == Experiment::Defect {
            // one fiber at the origin, so the defect can sit eps^(17/16) away from it
            cfg.regime.r_eps = Some(0.2);
            cfg.regime.omega = [-0.7, 0.7, -0.7, 0.7];
            cfg.regime.omega0 = [-0.125, 0.125, -0.125, 0.125];
            cfg.grid.h = Some(0.0125);
            cfg.grid.nz = 80;
            cfg.sweep.gamma1 = vec![0.5, 2.0, 10.0];
            cfg.sweep.defect_cells = vec![[8, 8, 4], [4, 4, 4], [4, 2, 2]];
            cfg.defect = Some(DefectConfig { x1: 0.4, l: 0.25 });
        }
        cfg
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_toml(&text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Hex SHA-256 of the canonical TOML serialisation.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Short prefix of [`hash`](Self::hash) used in output rows.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    /// Planar spacing for a regime: explicit `h`, or the fiber radius over `cells_per_radius`.
    pub fn spacing(&self, regime: &ScalingRegime) -> f64 {
        match (self.grid.h, self.grid.cells_per_radius) {
            (Some(h), _) => h,
            (None, Some(c)) => regime.fiber_radius() / c,
            (None, None) => regime.fiber_radius() / MIN_CELLS_PER_RADIUS,
        }
    }

    pub fn regime_pin(&self) -> PinMode {
        match self.regime.pin_mode {
            PinModeConfig::Gamma => PinMode::Gamma,
            PinModeConfig::Radius => PinMode::Radius,
        }
    }

    /// Swept `epsilon` values, or the configured one.
    pub fn epsilons(&self) -> Vec<f64> {
        if self.sweep.epsilons.is_empty() {
            vec![self.regime.epsilon]
        } else {
            self.sweep.epsilons.clone()
        }
    }

    /// `omega0` at `epsilon`, aligned to the lattice when `omega0_blocks` is set.
    pub fn omega0_at(&self, epsilon: f64) -> fiberhom_core::Result<Rect> {
        match self.sweep.omega0_blocks {
            Some(m) => Ok(Rect::centered((m as f64 + 0.5) * epsilon)),
            None => self.regime.omega0(),
        }
    }
}

/// A named constraint violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

fn push(v: &mut Vec<Violation>, code: &'static str, message: String) {
    v.push(Violation { code, message });
}

/// Checks every constraint the experiment relies on before any solve.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let omega = match cfg.regime.omega() {
        Ok(o) => o,
        Err(e) => {
            push(&mut out, "omega-invalid", e.to_string());
            return out;
        }
    };
    if !(cfg.grid.half_height > 0.0) || cfg.grid.nz < 2 {
        push(&mut out, "grid-invalid", "half_height must be positive and nz >= 2".into());
    }
    if let Some(h) = cfg.grid.h {
        if !(h > 0.0) {
            push(&mut out, "grid-invalid", "h must be positive".into());
        }
    }
    let needs_fibers = !matches!(cfg.experiment, Experiment::Bessel);
    for eps in cfg.epsilons() {
        let regime = match cfg.regime.regime_at(eps) {
            Ok(r) => r,
            Err(fiberhom_core::Error::RadiusUnderflow { .. }) => {
                push(&mut out, "radius-underflow", format!("r_eps underflows at eps = {eps}; pin r_eps instead"));
                continue;
            }
            Err(e) => {
                push(&mut out, "regime-invalid", format!("eps = {eps}: {e}"));
                continue;
            }
        };
        let omega0 = match cfg.omega0_at(eps) {
            Ok(o) => o,
            Err(e) => {
                push(&mut out, "omega0-invalid", e.to_string());
                continue;
            }
        };
        if !omega.compactly_contains(&omega0) {
            push(&mut out, "omega0-not-inside", format!("omega0 at eps = {eps} is not strictly inside omega"));
            continue;
        }
        let h = cfg.spacing(&regime);
        if needs_fibers && regime.fiber_radius() / h < MIN_CELLS_PER_RADIUS - 1e-9 {
            push(
                &mut out,
                "fibers-unresolved",
                format!("eps = {eps}: {:.2} cells per fiber radius (need 4)", regime.fiber_radius() / h),
            );
        }
        let p = &cfg.probe;
        if matches!(cfg.experiment, Experiment::Modal) {
            if !(p.eta > 0.0 && p.eta < 1.0) {
                push(&mut out, "eta-out-of-range", format!("eta = {} must lie in (0, 1)", p.eta));
            }
            if !(p.nu > 0.0 && p.nu < 1.0) {
                push(&mut out, "nu-out-of-range", format!("nu = {} must lie in (0, 1)", p.nu));
            }
            if p.tau <= tau_threshold(regime.kappa, eps, p.eta) {
                push(
                    &mut out,
                    "tau-too-small",
                    format!("tau = {} <= kappa eps^((1-eta)/(2(1+eta))) = {:.4}", p.tau, tau_threshold(regime.kappa, eps, p.eta)),
                );
            }
            if regime.epsilon.powf(regime.sigma) <= eps * p.tau {
                push(&mut out, "sigma-below-tau", format!("eps^sigma must exceed eps tau at eps = {eps}"));
            }
            if let Ok(lattice) = FiberLattice::build(regime, omega, omega0) {
                let n = 200;
                let hit = (0..=n).any(|i| {
                    (0..=n).any(|j| {
                        let t = [i as f64 / n as f64, j as f64 / n as f64];
                        let x = [omega0.x0 + t[0] * omega0.width(), omega0.y0 + t[1] * omega0.height()];
                        lattice.buffer_contains(p.tau, &omega0, x)
                    })
                });
                if !hit {
                    push(&mut out, "buffer-empty", format!("no point of omega0 is eps tau = {:.4} away from every fiber", eps * p.tau));
                }
            }
        }
        if matches!(cfg.experiment, Experiment::Defect) {
            match &cfg.defect {
                None => push(&mut out, "defect-missing", "defect experiment needs a [defect] block".into()),
                Some(_) if cfg.sweep.defect_cells.is_empty() || cfg.sweep.gamma1.is_empty() => {
                    push(&mut out, "defect-missing", "defect sweep needs defect_cells and gamma1".into())
                }
                Some(d) => {
                    if let Ok(lat) = FiberLattice::build(regime, omega, omega0) {
                        let buffer = eps.powf(BUFFER_EXPONENT);
                        for cells in &cfg.sweep.defect_cells {
                            let (x1, y) = (d.x1 + cells[0] as f64 * h, 0.5 * cells[1] as f64 * h);
                            // the nearest point of the box to each fiber centre
                            let gap = lat
                                .indices()
                                .into_iter()
                                .map(|idx| {
                                    let c = lat.center(idx);
                                    lat.dist_to_fibers([c[0].clamp(d.x1, x1), c[1].clamp(-y, y)])
                                })
                                .fold(f64::INFINITY, f64::min);
                            let inside = omega.contains([d.x1, -y]) && omega.contains([x1, y]);
                            if gap < buffer || !inside {
                                push(
                                    &mut out,
                                    "defect-outside-buffer",
                                    format!("defect {cells:?} is closer than eps^(17/16) = {buffer:.4} to a fiber or leaves omega"),
                                );
                            }
                        }
                    }
                    if !(d.l < cfg.grid.half_height) {
                        push(&mut out, "defect-outside-buffer", "defect height bound l must be below the half-height".into());
                    }
                }
            }
        }
        if matches!(cfg.experiment, Experiment::Supest) {
            let p = &cfg.probe;
            if !(p.alpha > 1.0 && p.alpha < 2.0) || !(p.beta > 0.0 && p.beta < 1.0 - p.alpha / 2.0) {
                push(&mut out, "probe-exponents", "need 1 < alpha < 2 and 0 < beta < 1 - alpha/2".into());
            }
        }
        if matches!(cfg.experiment, Experiment::Blowup) && !(cfg.probe.p > 2.0 && cfg.probe.rho > 0.0 && cfg.probe.rho < 1.0) {
            push(&mut out, "probe-exponents", "blow-up needs p > 2 and 0 < rho < 1".into());
        }
    }
    out
}

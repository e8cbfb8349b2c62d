//! Corrector energy, blow-up functional and the planar sharpness probes.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::{FiberLattice, Rect, ScalingRegime};
use crate::homogenized::{Box3, HomogenizedPair};
use crate::linalg::SolverOptions;
use crate::math::{exp, log, pow, sq, sqrt, TAU};
use crate::mesh::{CellCoefficients, Field2, Field3, Grid2};
use crate::solver3d::{edge_lengths, Medium3};
use crate::weighted2d::{self, check_resolution, discrete_energy, ModalRhs};

/// Corrector `grad c (W* - V*) + c grad W* + (1 - c) d3 V* e3` at a point, by trilinear
/// interpolation of the homogenized pair.
pub fn corrector_field(pair: &HomogenizedPair, lattice: &FiberLattice, x: [f64; 3]) -> Option<[f64; 3]> {
    let xp = [x[0], x[1]];
    let c = lattice.capacity(xp);
    let gc = lattice.capacity_gradient(xp);
    let w = pair.w.interpolate(x)?;
    let v = pair.v.interpolate(x)?;
    let gw = pair.w.gradient(x)?;
    let gv = pair.v.gradient(x)?;
    Some([
        gc[0] * (w - v) + c * gw[0],
        gc[1] * (w - v) + c * gw[1],
        c * gw[2] + (1.0 - c) * gv[2],
    ])
}

/// Component `dir` of the corrector at the midpoint of the edge from node `a` to node `b`,
/// using edge differences of the pair.
fn corrector_on_edge(pair: &HomogenizedPair, lattice: &FiberLattice, dir: usize, a: usize, b: usize, mid: [f64; 3], len: f64) -> f64 {
    let xp = [mid[0], mid[1]];
    let c = lattice.capacity(xp);
    let (wa, wb) = (pair.w.values[a], pair.w.values[b]);
    let dw = (wb - wa) / len;
    if dir < 2 {
        let gc = lattice.capacity_gradient(xp)[dir];
        if gc == 0.0 {
            return c * dw;
        }
        let diff = 0.5 * (wa + wb) - 0.5 * (pair.v.values[a] + pair.v.values[b]);
        gc * diff + c * dw
    } else {
        let dv = (pair.v.values[b] - pair.v.values[a]) / len;
        c * dw + (1.0 - c) * dv
    }
}

/// `E_eps = int a |grad W_eps - corrector|^2`, evaluated edge by edge:
/// `sum_e T_e (dW_e - len_e G_dir(mid_e))^2`.
pub fn corrector_energy(w_eps: &Field3, medium: &Medium3, pair: &HomogenizedPair, lattice: &FiberLattice) -> Result<f64> {
    corrector_energy_on(w_eps, medium, pair, lattice, &|_| true)
}

/// Corrector energy restricted to edges whose midpoint satisfies `keep`.
pub fn corrector_energy_on(
    w_eps: &Field3,
    medium: &Medium3,
    pair: &HomogenizedPair,
    lattice: &FiberLattice,
    keep: &dyn Fn([f64; 3]) -> bool,
) -> Result<f64> {
    let grid = w_eps.grid;
    if pair.w.grid != grid {
        return invalid("homogenized pair and W_eps must share a grid");
    }
    let lens = edge_lengths(&grid);
    let mut e = 0.0;
    medium.for_each_edge(&grid, |ed| {
        let mut mid = grid.node(ed.start[0], ed.start[1], ed.start[2]);
        mid[ed.dir] += 0.5 * lens[ed.dir];
        if !keep(mid) {
            return;
        }
        let g = corrector_on_edge(pair, lattice, ed.dir, ed.a, ed.b, mid, lens[ed.dir]);
        e += ed.conductance * sq(w_eps.values[ed.b] - w_eps.values[ed.a] - lens[ed.dir] * g);
    });
    Ok(e)
}

/// Blow-up functional `r^{2 rho (1 - 2/p)} ||grad W_eps||^2_{L^p(Omega' \ Q_eps)}` with the
/// annulus-measure constant `C_1 = max(m, 1/m)`, `m = |O_eps cap Omega'| / r^{2 rho}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupResult {
    pub functional: f64,
    pub lp_norm: f64,
    pub annulus_measure: f64,
    pub c1: f64,
    /// `int_{O_eps cap Omega'} |grad W_eps|^2`.
    pub annulus_energy: f64,
}

pub fn blowup_functional(w_eps: &Field3, lattice: &FiberLattice, p: f64, rho: f64, region: &Box3) -> Result<BlowupResult> {
    if !(p > 2.0) || !(rho > 0.0 && rho < 1.0) {
        return invalid("blow-up functional needs p > 2 and 0 < rho < 1");
    }
    let grid = w_eps.grid;
    let g2 = grid.plane;
    let reg = &lattice.regime;
    let r = reg.r_eps;
    let outer = reg.epsilon * pow(r, rho);
    let half_diag = g2.h * core::f64::consts::FRAC_1_SQRT_2;
    let vol = grid.cell_volume();
    let mut sum_p = 0.0;
    let mut annulus = 0.0;
    let mut annulus_energy = 0.0;
    for j in 0..g2.ny {
        for i in 0..g2.nx {
            let cc = g2.cell_center(i, j);
            let d = lattice.dist_to_fibers(cc);
            let off_fiber = d > half_diag;
            let in_annulus = d > 0.0 && d < outer && lattice.omega0.contains(cc);
            if !off_fiber && !in_annulus {
                continue;
            }
            for k in 0..grid.nz {
                let center = [cc[0], cc[1], grid.z(k) + 0.5 * grid.hz()];
                if !region.contains(center) {
                    continue;
                }
                let g = w_eps.cell_gradient(i, j, k);
                let m2 = sq(g[0]) + sq(g[1]) + sq(g[2]);
                if off_fiber {
                    sum_p += pow(m2, 0.5 * p) * vol;
                }
                if in_annulus {
                    annulus += vol;
                    annulus_energy += m2 * vol;
                }
            }
        }
    }
    let lp_norm = pow(sum_p, 1.0 / p);
    let functional = pow(r, 2.0 * rho * (1.0 - 2.0 / p)) * sq(lp_norm);
    let m = annulus / pow(r, 2.0 * rho);
    let c1 = if m > 0.0 { m.max(1.0 / m) } else { f64::INFINITY };
    Ok(BlowupResult { functional, lp_norm, annulus_measure: annulus, c1, annulus_energy })
}

/// A planar configuration used by the probes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSetup {
    pub lattice: FiberLattice,
    pub grid: Grid2,
}

impl PlanarSetup {
    /// Grid over `omega` whose spacing resolves the fiber radius with `cells_per_radius` cells.
    pub fn new(regime: ScalingRegime, omega: Rect, omega0: Rect, cells_per_radius: f64) -> Result<Self> {
        let lattice = FiberLattice::build(regime, omega, omega0)?;
        let target = regime.fiber_radius() / cells_per_radius;
        let n = crate::math::ceil(omega.width() / target - 1e-9) as usize;
        let grid = Grid2::new(omega, n, crate::math::round(n as f64 * omega.height() / omega.width()) as usize)?;
        Ok(PlanarSetup { lattice, grid })
    }
}

/// Solution of `-div(a grad phi) + lambda a phi = a eps^{-1} 1_{D_00}` scaled by `scale`.
pub struct IndicatorSolve {
    pub phi: Field2,
    /// `||sqrt(a) f||` of the unscaled source `eps^{-1} 1_{D_00}`.
    pub source_norm: f64,
    pub coeffs: CellCoefficients,
}

fn solve_indicator(setup: &PlanarSetup, lambda: f64, opts: &SolverOptions) -> Result<IndicatorSolve> {
    let lat = &setup.lattice;
    if !lat.contains_index((0, 0)) {
        return invalid("the central fiber is not part of the lattice");
    }
    check_resolution(&setup.grid, lat.regime.fiber_radius())?;
    let eps = lat.regime.epsilon;
    let rho = lat.regime.fiber_radius();
    let g = move |x: [f64; 2]| if sq(x[0]) + sq(x[1]) <= sq(rho) { 1.0 / eps } else { 0.0 };
    let rhs = ModalRhs { g: Some(&g), ..Default::default() };
    let sys = weighted2d::assemble_modal(&setup.grid, lat, lambda, &rhs)?;
    let sol = weighted2d::solve(&sys, opts)?;
    Ok(IndicatorSolve { phi: sol.field, source_norm: sqrt(sys.data_norms[1]), coeffs: sys.coeffs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleResult {
    pub epsilon: f64,
    pub lambda: f64,
    /// `eps ||phi_eps||_inf`.
    pub measured: f64,
    /// `kappa / (gamma + lambda kappa)`.
    pub lower_bound: f64,
    pub source_norm: f64,
}

pub fn counterexample_run(setup: &PlanarSetup, lambda: f64, opts: &SolverOptions) -> Result<CounterexampleResult> {
    let s = solve_indicator(setup, lambda, opts)?;
    let reg = setup.lattice.regime;
    Ok(CounterexampleResult {
        epsilon: reg.epsilon,
        lambda,
        measured: reg.epsilon * s.phi.max_abs(),
        lower_bound: reg.kappa / (reg.gamma + lambda * reg.kappa),
        source_norm: s.source_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub epsilon: f64,
    pub lambda: f64,
    pub sup_norm: f64,
    /// `eps^alpha lambda^beta ||phi||_inf`.
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
    /// `eps` values skipped because the fibers are not resolved.
    pub skipped: Vec<f64>,
}

impl ProbeTable {
    /// `max / min` of the recorded products.
    pub fn spread(&self) -> f64 {
        let max = self.rows.iter().map(|r| r.product).fold(0.0, f64::max);
        let min = self.rows.iter().map(|r| r.product).fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Records `eps^alpha lambda^beta ||phi_eps||_inf` for the unit-normalised indicator source.
pub fn sup_estimate_probe(setups: &[PlanarSetup], lambdas: &[f64], alpha: f64, beta: f64, opts: &SolverOptions) -> Result<ProbeTable> {
    if !(alpha > 1.0 && alpha < 2.0) || !(beta > 0.0 && beta < 1.0 - alpha / 2.0) {
        return invalid("sup-estimate exponents need 1 < alpha < 2 and 0 < beta < 1 - alpha/2");
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for setup in setups {
        let eps = setup.lattice.regime.epsilon;
        if check_resolution(&setup.grid, setup.lattice.regime.fiber_radius()).is_err() {
            skipped.push(eps);
            continue;
        }
        for &lambda in lambdas {
            let s = solve_indicator(setup, lambda, opts)?;
            let sup = s.phi.max_abs() / s.source_norm;
            rows.push(ProbeRow { epsilon: eps, lambda, sup_norm: sup, product: pow(eps, alpha) * pow(lambda, beta) * sup });
        }
    }
    Ok(ProbeTable { rows, skipped })
}

/// `int a |v|^s / (eps^{2-s} (int a |grad v|^2)^{s/2})` by the grid quadrature.
pub fn weighted_sobolev_ratio(v: &Field2, coeffs: &CellCoefficients, epsilon: f64, s: f64) -> Result<f64> {
    if !(s >= 2.0) {
        return invalid("Sobolev exponent must be at least 2");
    }
    let grid = v.grid;
    let zero = alloc::vec![0.0; grid.n_nodes()];
    let dir = discrete_energy(v, coeffs, &zero);
    if !(dir > 0.0) {
        return invalid("v has zero gradient");
    }
    let mass = coeffs.node_mass(&grid);
    let num: f64 = v.values.iter().zip(&mass).map(|(x, m)| m * pow(x.abs(), s)).sum();
    Ok(num / (pow(epsilon, 2.0 - s) * pow(dir, s / 2.0)))
}

/// Radial integrals of the test function `g_eps` (exact up to Simpson quadrature).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunctionIntegrals {
    /// `int a |g|^s`.
    pub weighted_power: f64,
    /// `int a |grad g|^2`.
    pub dirichlet: f64,
    /// `int a g^2`.
    pub weighted_l2: f64,
}

pub fn test_function_integrals(regime: &ScalingRegime, s: f64) -> TestFunctionIntegrals {
    let eps = regime.epsilon;
    let rho = regime.fiber_radius();
    let lam = log(0.5 * eps) - log(rho);
    // int_rho^{eps/2} (1 - c)^q r dr with r = rho exp(lam u)
    let annulus = |q: f64| {
        let n = 4000;
        let h = 1.0 / n as f64;
        let f = |u: f64| pow(1.0 - u, q) * sq(rho) * exp(2.0 * lam * u) * lam;
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let disc = |q: f64| regime.alpha * pow(eps, -q) * 0.5 * sq(rho);
    TestFunctionIntegrals {
        weighted_power: TAU * (disc(s) + pow(eps, -s) * annulus(s)),
        dirichlet: TAU / (sq(eps) * lam),
        weighted_l2: TAU * (disc(2.0) + pow(eps, -2.0) * annulus(2.0)),
    }
}

/// Sobolev ratio of `g_eps` by radial quadrature.
pub fn test_function_sobolev_ratio(regime: &ScalingRegime, s: f64) -> f64 {
    let t = test_function_integrals(regime, s);
    t.weighted_power / (pow(regime.epsilon, 2.0 - s) * pow(t.dirichlet, s / 2.0))
}

/// `(kappa, gamma)`-budget `gamma + lambda kappa` of the test-function energy.
pub fn test_function_budget(regime: &ScalingRegime, lambda: f64) -> f64 {
    regime.gamma + lambda * regime.kappa
}

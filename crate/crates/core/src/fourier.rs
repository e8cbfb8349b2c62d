//! Sine-series reduction of `-div(a grad U) = F` on `omega x (-L, L)` with `U = 0` on the
//! boundary to the modal family `-div(a grad u_n) + lambda_n a u_n = f_n`,
//! `lambda_n = n^2 pi^2 / (4 L^2)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::geometry::{FiberLattice, Rect};
use crate::linalg::{SolveReport, SolverOptions};
use crate::math::{cos, pow, sin, sq, sqrt, PI};
use crate::mesh::{CellCoefficients, Field2, Grid2};
use crate::weighted2d::{assemble, solve_assembled, Dirichlet2};

/// Default number of modes.
pub const DEFAULT_MODES: usize = 16;

pub fn mode_lambda(n: usize, l: f64) -> f64 {
    sq(n as f64 * PI / (2.0 * l))
}

/// `sin(n pi (x3 / L + 1) / 2)`.
pub fn mode_shape(n: usize, l: f64, x3: f64) -> f64 {
    sin(0.5 * n as f64 * PI * (x3 / l + 1.0))
}

/// `f_n(x') = L^{-1} int_{-L}^{L} F(x', x3) sin(n pi (x3/L + 1)/2) dx3` for `n = 1..=n_modes`,
/// by composite Simpson on `m >= 4 n_modes` intervals (rounded up to even).
pub fn project_source(f: &dyn Fn([f64; 3]) -> f64, x: [f64; 2], l: f64, n_modes: usize, m: usize) -> Result<Vec<f64>> {
    if m < 4 * n_modes {
        return invalid("need at least 4 quadrature points per mode");
    }
    let m = m + m % 2;
    let h = 2.0 * l / m as f64;
    let mut out = vec![0.0; n_modes];
    for k in 0..=m {
        let z = -l + k as f64 * h;
        let w = if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let v = f([x[0], x[1], z]) * w;
        if v == 0.0 {
            continue;
        }
        for (n, o) in out.iter_mut().enumerate() {
            *o += v * mode_shape(n + 1, l, z);
        }
    }
    for o in &mut out {
        *o *= h / (3.0 * l);
    }
    Ok(out)
}

/// Nodal loads of every mode on a planar grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSources {
    pub grid: Grid2,
    pub l: f64,
    /// `loads[n - 1]` are the dual-cell integrals of `f_n`.
    pub loads: Vec<Vec<f64>>,
    /// `||f_n||_{L^2(omega)}`.
    pub norms: Vec<f64>,
}

impl ModeSources {
    pub fn n_modes(&self) -> usize {
        self.loads.len()
    }

    /// `sum_n ||f_n||^2`, to be compared with `||F||^2 / L`.
    pub fn parseval_sum(&self) -> f64 {
        self.norms.iter().map(|n| n * n).sum()
    }
}

/// Projects `F` at `sub x sub` points per cell and integrates over dual cells.
pub fn project_onto_grid(grid: &Grid2, f: &dyn Fn([f64; 3]) -> f64, l: f64, n_modes: usize, m: usize, sub: usize) -> Result<ModeSources> {
    if n_modes == 0 {
        return invalid("at least one mode is required");
    }
    let half = (sub / 2).max(1);
    let w = grid.h * grid.h / (4 * half * half) as f64;
    let step = grid.h / (2 * half) as f64;
    let mut loads = vec![vec![0.0; grid.n_nodes()]; n_modes];
    let mut norms = vec![0.0; n_modes];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let base = grid.node(i, j);
            for (qi, qj) in [(0usize, 0usize), (1, 0), (0, 1), (1, 1)] {
                let node = grid.idx(i + qi, j + qj);
                for b in 0..half {
                    for a in 0..half {
                        let x = [
                            base[0] + step * ((qi * half + a) as f64 + 0.5),
                            base[1] + step * ((qj * half + b) as f64 + 0.5),
                        ];
                        let c = project_source(f, x, l, n_modes, m)?;
                        for n in 0..n_modes {
                            loads[n][node] += c[n] * w;
                            norms[n] += c[n] * c[n] * w;
                        }
                    }
                }
            }
        }
    }
    Ok(ModeSources { grid: *grid, l, loads, norms: norms.into_iter().map(sqrt).collect() })
}

/// Solutions `u_n` (medium) and `v_n` (background, `a = 1`) for every mode.
#[derive(Debug, Clone)]
pub struct ModalStack {
    pub l: f64,
    pub lambdas: Vec<f64>,
    pub u: Vec<Field2>,
    pub v: Vec<Field2>,
    pub source_norms: Vec<f64>,
    pub reports: Vec<SolveReport>,
}

fn solve_mode(grid: &Grid2, coeffs: &CellCoefficients, lambda: f64, loads: &[f64], opts: &SolverOptions) -> Result<(Field2, SolveReport)> {
    let reaction: Vec<f64> = coeffs.node_mass(grid).iter().map(|m| lambda * m).collect();
    let bc = Dirichlet2::zero(grid);
    let (st, rhs) = assemble(grid, coeffs, &reaction, loads, &bc);
    solve_assembled(grid, &st, &rhs, &bc, None, opts)
}

pub fn solve_stack(sources: &ModeSources, coeffs: &CellCoefficients, opts: &SolverOptions) -> Result<ModalStack> {
    let grid = sources.grid;
    let background = CellCoefficients::uniform(&grid, 1.0);
    let mut stack = ModalStack {
        l: sources.l,
        lambdas: Vec::new(),
        u: Vec::new(),
        v: Vec::new(),
        source_norms: sources.norms.clone(),
        reports: Vec::new(),
    };
    for (n, loads) in sources.loads.iter().enumerate() {
        let lambda = mode_lambda(n + 1, sources.l);
        let (u, ru) = solve_mode(&grid, coeffs, lambda, loads, opts).map_err(|e| mode_error(n + 1, e))?;
        let (v, rv) = solve_mode(&grid, &background, lambda, loads, opts).map_err(|e| mode_error(n + 1, e))?;
        stack.lambdas.push(lambda);
        stack.u.push(u);
        stack.v.push(v);
        stack.reports.push(ru);
        stack.reports.push(rv);
    }
    Ok(stack)
}

fn mode_error(n: usize, e: crate::Error) -> crate::Error {
    crate::Error::InvalidInput(alloc::format!("mode {n}: {e}"))
}

/// Value and gradient of a partial sine series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub value: f64,
    pub gradient: Option<[f64; 3]>,
    /// Magnitude of the last retained term.
    pub truncation: f64,
}

fn series(fields: &[Field2], l: f64, x: [f64; 3], with_gradient: bool) -> Option<Reconstruction> {
    let xp = [x[0], x[1]];
    let mut value = 0.0;
    let mut g = [0.0; 3];
    let mut last = 0.0;
    for (k, f) in fields.iter().enumerate() {
        let n = k + 1;
        let s = mode_shape(n, l, x[2]);
        let u = f.interpolate(xp)?;
        value += u * s;
        last = (u * s).abs();
        if with_gradient {
            let gu = f.gradient(xp)?;
            let c = cos(0.5 * n as f64 * PI * (x[2] / l + 1.0)) * n as f64 * PI / (2.0 * l);
            g[0] += gu[0] * s;
            g[1] += gu[1] * s;
            g[2] += u * c;
        }
    }
    Some(Reconstruction { value, gradient: with_gradient.then_some(g), truncation: last })
}

impl ModalStack {
    /// `U_eps(x)` and optionally its gradient; `None` outside the grid.
    pub fn reconstruct(&self, x: [f64; 3], with_gradient: bool) -> Option<Reconstruction> {
        series(&self.u, self.l, x, with_gradient)
    }

    /// Background series `V(x)`.
    pub fn reconstruct_background(&self, x: [f64; 3], with_gradient: bool) -> Option<Reconstruction> {
        series(&self.v, self.l, x, with_gradient)
    }
}

/// Buffer-region gaps between `U_eps` and `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityGap {
    pub sup_gap: f64,
    pub grad_sup_gap: f64,
    pub holder_quotient: f64,
    /// False when `tau` violates `tau > kappa eps^{(1-eta)/(2(1+eta))}`.
    pub supported: bool,
    pub tau_threshold: f64,
    pub samples: usize,
}

/// `tau` threshold `kappa eps^{(1 - eta) / (2 (1 + eta))}`.
pub fn tau_threshold(kappa: f64, epsilon: f64, eta: f64) -> f64 {
    kappa * pow(epsilon, (1.0 - eta) / (2.0 * (1.0 + eta)))
}

/// Gaps and a Hölder quotient estimated from `pairs` random point pairs in
/// `{x' in omega1 : dist(x', D_eps) >= eps tau} x (-L, L)`; the sampled set is selected by `select`.
#[allow(clippy::too_many_arguments)]
pub fn regularity_gap(
    stack: &ModalStack,
    lattice: &FiberLattice,
    omega1: &Rect,
    tau: f64,
    nu: f64,
    eta: f64,
    pairs: usize,
    seed: u64,
) -> Result<RegularityGap> {
    let threshold = tau_threshold(lattice.regime.kappa, lattice.regime.epsilon, eta);
    let buffer = |x: [f64; 2]| lattice.buffer_contains(tau, omega1, x);
    let mut g = gap_sampler(stack, omega1, &buffer, nu, pairs, seed)?;
    g.supported = tau > threshold;
    g.tau_threshold = threshold;
    Ok(g)
}

/// Same quotient restricted to the collar `{0 < dist(x', D_eps) < eps tau}`.
pub fn collar_gap(stack: &ModalStack, lattice: &FiberLattice, omega1: &Rect, tau: f64, nu: f64, pairs: usize, seed: u64) -> Result<RegularityGap> {
    let eps = lattice.regime.epsilon;
    let collar = |x: [f64; 2]| {
        let d = lattice.dist_to_fibers(x);
        omega1.contains(x) && d > 0.0 && d < eps * tau
    };
    gap_sampler(stack, omega1, &collar, nu, pairs, seed)
}

fn gap_sampler(stack: &ModalStack, omega1: &Rect, keep: &dyn Fn([f64; 2]) -> bool, nu: f64, pairs: usize, seed: u64) -> Result<RegularityGap> {
    if pairs < 1000 {
        return invalid("Hölder quotient needs at least 1000 point pairs");
    }
    if !(nu > 0.0 && nu < 1.0) {
        return invalid("Hölder exponent must lie in (0, 1)");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = stack.l;
    let draw = |rng: &mut ChaCha8Rng| -> Result<([f64; 3], f64, [f64; 3])> {
        for _ in 0..100_000 {
            let x = [rng.gen_range(omega1.x0..omega1.x1), rng.gen_range(omega1.y0..omega1.y1), rng.gen_range(-l..l)];
            if !keep([x[0], x[1]]) {
                continue;
            }
            let (Some(u), Some(v)) = (stack.reconstruct(x, true), stack.reconstruct_background(x, true)) else {
                continue;
            };
            let gu = u.gradient.unwrap_or_default();
            let gv = v.gradient.unwrap_or_default();
            return Ok((x, u.value - v.value, [gu[0] - gv[0], gu[1] - gv[1], gu[2] - gv[2]]));
        }
        invalid("sampling region is empty")
    };
    let mut sup_gap: f64 = 0.0;
    let mut grad_sup_gap: f64 = 0.0;
    let mut holder: f64 = 0.0;
    for _ in 0..pairs {
        let (x, dx, gx) = draw(&mut rng)?;
        let (y, dy, gy) = draw(&mut rng)?;
        for (d, g) in [(dx, gx), (dy, gy)] {
            sup_gap = sup_gap.max(d.abs());
            grad_sup_gap = grad_sup_gap.max(sqrt(sq(g[0]) + sq(g[1]) + sq(g[2])));
        }
        let dist = sqrt(sq(x[0] - y[0]) + sq(x[1] - y[1]) + sq(x[2] - y[2]));
        if dist > 0.0 {
            let dg = sqrt(sq(gx[0] - gy[0]) + sq(gx[1] - gy[1]) + sq(gx[2] - gy[2]));
            holder = holder.max(dg / pow(dist, nu));
        }
    }
    Ok(RegularityGap {
        sup_gap,
        grad_sup_gap,
        holder_quotient: holder,
        supported: true,
        tau_threshold: 0.0,
        samples: 2 * pairs,
    })
}

/// Per-mode `(sup |u_n - v_n|, sup |grad(u_n - v_n)|)` over buffer nodes.
pub fn mode_gaps(stack: &ModalStack, lattice: &FiberLattice, omega1: &Rect, tau: f64) -> Vec<(f64, f64)> {
    stack
        .u
        .iter()
        .zip(&stack.v)
        .map(|(u, v)| {
            let g = u.grid;
            let d = u.sub(v);
            let mut s: f64 = 0.0;
            let mut gs: f64 = 0.0;
            for j in 1..g.ny {
                for i in 1..g.nx {
                    if lattice.buffer_contains(tau, omega1, g.node(i, j)) {
                        s = s.max(d.at(i, j).abs());
                        let gr = d.node_gradient(i, j);
                        gs = gs.max(sqrt(sq(gr[0]) + sq(gr[1])));
                    }
                }
            }
            (s, gs)
        })
        .collect()
}

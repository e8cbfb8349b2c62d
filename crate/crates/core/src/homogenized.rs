//! Coupled limit system for `(W*, V*)`:
//! `-Lap W + gamma (W - V) 1_{Omega0} = 0` and `-kappa d33 V + gamma (V - W) = 0` in `Omega0`,
//! with `W = Phi_b` on the cylinder boundary and `V = Phi_b` on the top and bottom faces.
//!
//! Both solution paths use the same vertex-centred discretisation, so they agree up to solver
//! tolerances: the modal path diagonalises the vertical second difference with a discrete sine
//! transform and eliminates `V` mode by mode; the fixed-point path alternates full solves.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoundaryData, Rect};
use crate::linalg::{pcg, solve_tridiagonal, SolveReport, SolverOptions, Stencil};
use crate::math::{sin, sq, PI};
use crate::mesh::{CellCoefficients, Field2, Field3, Grid3};
use crate::weighted2d::{self, Dirichlet2};

/// `(W*, V*)` on a common grid. `v` is meaningful only where `in_omega0` holds; elsewhere it
/// stores a copy of `w`.
#[derive(Debug, Clone)]
pub struct HomogenizedPair {
    pub w: Field3,
    pub v: Field3,
    pub omega0: Rect,
    pub kappa: f64,
    pub gamma: f64,
    /// Planar node mask of `omega0`.
    pub in_omega0: Vec<bool>,
    pub residual_w: f64,
    pub residual_v: f64,
    pub iterations: usize,
    pub reports: Vec<SolveReport>,
}

fn omega0_mask(grid: &Grid3, omega0: &Rect) -> Vec<bool> {
    let g = grid.plane;
    let mut m = vec![false; g.n_nodes()];
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            m[g.idx(i, j)] = omega0.contains(g.node(i, j));
        }
    }
    m
}

/// `phi_L` at all nodes: linear in `x3` between the top and bottom data.
fn lift(grid: &Grid3, phi_b: &dyn BoundaryData) -> Field3 {
    let l = grid.half_height;
    Field3::from_fn(*grid, |x| {
        let top = phi_b.value([x[0], x[1], l]);
        let bot = phi_b.value([x[0], x[1], -l]);
        x[2] / (2.0 * l) * (top - bot) + 0.5 * (top + bot)
    })
}

/// Eigenvalues of the vertical second difference with zero end values.
pub fn vertical_eigenvalues(grid: &Grid3) -> Vec<f64> {
    let nz = grid.nz;
    let hz = grid.hz();
    (1..nz).map(|n| 4.0 / (hz * hz) * sq(sin(n as f64 * PI / (2.0 * nz as f64)))).collect()
}

fn sine_table(nz: usize) -> Vec<f64> {
    let mut t = vec![0.0; (nz - 1) * (nz - 1)];
    for n in 1..nz {
        for k in 1..nz {
            t[(n - 1) * (nz - 1) + (k - 1)] = sin(PI * (n * k) as f64 / nz as f64);
        }
    }
    t
}

fn check_inputs(grid: &Grid3, omega0: &Rect, kappa: f64, gamma: f64) -> Result<()> {
    if !(kappa > 0.0) || !(gamma >= 0.0) {
        return invalid("homogenized system needs kappa > 0 and gamma >= 0");
    }
    if !grid.plane.rect().compactly_contains(omega0) {
        return invalid("omega0 must be compactly contained in the grid rectangle");
    }
    Ok(())
}

/// Modal solve with `n_modes` vertical modes (at most `nz - 1`; `None` keeps all).
pub fn solve_homogenized(
    phi_b: &dyn BoundaryData,
    kappa: f64,
    gamma: f64,
    omega0: &Rect,
    grid: &Grid3,
    n_modes: Option<usize>,
    opts: &SolverOptions,
) -> Result<HomogenizedPair> {
    check_inputs(grid, omega0, kappa, gamma)?;
    let g2 = grid.plane;
    let nz = grid.nz;
    let nm = n_modes.unwrap_or(nz - 1).min(nz - 1);
    let n2 = g2.n_nodes();
    let hz = grid.hz();
    let mask = omega0_mask(grid, omega0);
    let phil = lift(grid, phi_b);
    let phi = Field3::from_fn(*grid, |x| phi_b.value(x));
    let unit = Medium3Like::unit(grid);
    // source r = -A phi_L at interior nodes, and lateral data phi_0 = Phi_b - phi_L
    let mut src = vec![0.0; grid.n_nodes()];
    unit.apply_full(grid, &phil, &mut src);
    let table = sine_table(nz);
    let mu = vertical_eigenvalues(grid);
    let coeffs = CellCoefficients::uniform(&g2, 1.0);
    let base_mass = coeffs.node_mass(&g2);
    let mut w_hat = vec![0.0; nm * n2];
    let mut reports = Vec::new();
    for n in 0..nm {
        let row = &table[n * (nz - 1)..(n + 1) * (nz - 1)];
        let transform = |vals: &dyn Fn(usize) -> f64| -> f64 {
            let mut s = 0.0;
            for k in 1..nz {
                s += vals(k) * row[k - 1];
            }
            2.0 * s / nz as f64
        };
        let g_eff = gamma * kappa * mu[n] / (gamma + kappa * mu[n]);
        let mut loads = vec![0.0; n2];
        let mut bc = Dirichlet2::zero(&g2);
        for j in 0..=g2.ny {
            for i in 0..=g2.nx {
                let p = g2.idx(i, j);
                if g2.is_boundary(i, j) {
                    let v = transform(&|k| phi.values[p + n2 * k] - phil.values[p + n2 * k]);
                    bc.values[p] = v;
                } else {
                    loads[p] = -transform(&|k| src[p + n2 * k]) / hz;
                }
            }
        }
        let reaction: Vec<f64> = (0..n2)
            .map(|p| base_mass[p] * (mu[n] + if mask[p] { g_eff } else { 0.0 }))
            .collect();
        let (st, rhs) = weighted2d::assemble(&g2, &coeffs, &reaction, &loads, &bc);
        let (f, rep) = weighted2d::solve_assembled(&g2, &st, &rhs, &bc, None, opts)?;
        w_hat[n * n2..(n + 1) * n2].copy_from_slice(&f.values);
        reports.push(rep);
    }
    let mut w = phil.clone();
    let mut v = phil.clone();
    for k in 1..nz {
        for p in 0..n2 {
            let mut sw = 0.0;
            let mut sv = 0.0;
            for n in 0..nm {
                let s = table[n * (nz - 1) + (k - 1)];
                let wh = w_hat[n * n2 + p];
                sw += wh * s;
                sv += gamma / (gamma + kappa * mu[n]) * wh * s;
            }
            w.values[p + n2 * k] += sw;
            v.values[p + n2 * k] += sv;
        }
    }
    // lateral boundary nodes carry Phi_b exactly
    for k in 0..=nz {
        for j in 0..=g2.ny {
            for i in 0..=g2.nx {
                if g2.is_boundary(i, j) {
                    let q = grid.idx(i, j, k);
                    w.values[q] = phi.values[q];
                }
            }
        }
    }
    finish_pair(grid, w, v, mask, *omega0, kappa, gamma, 0, reports)
}

#[allow(clippy::too_many_arguments)]
fn finish_pair(
    grid: &Grid3,
    w: Field3,
    mut v: Field3,
    mask: Vec<bool>,
    omega0: Rect,
    kappa: f64,
    gamma: f64,
    iterations: usize,
    reports: Vec<SolveReport>,
) -> Result<HomogenizedPair> {
    let n2 = grid.plane.n_nodes();
    for k in 0..=grid.nz {
        for p in 0..n2 {
            if !mask[p] {
                v.values[p + n2 * k] = w.values[p + n2 * k];
            }
        }
    }
    let (rw, rv) = residuals(grid, &w, &v, &mask, kappa, gamma);
    Ok(HomogenizedPair { w, v, omega0, kappa, gamma, in_omega0: mask, residual_w: rw, residual_v: rv, iterations, reports })
}

/// Max-norm residuals of both equations in PDE scaling.
fn residuals(grid: &Grid3, w: &Field3, v: &Field3, mask: &[bool], kappa: f64, gamma: f64) -> (f64, f64) {
    let unit = Medium3Like::unit(grid);
    let mut aw = vec![0.0; grid.n_nodes()];
    unit.apply_full(grid, w, &mut aw);
    let g2 = grid.plane;
    let vol = grid.cell_volume();
    let hz2 = sq(grid.hz());
    let (mut rw, mut rv) = (0.0f64, 0.0f64);
    for k in 1..grid.nz {
        for j in 1..g2.ny {
            for i in 1..g2.nx {
                let p = g2.idx(i, j);
                let q = grid.idx(i, j, k);
                let c = if mask[p] { gamma * (w.values[q] - v.values[q]) } else { 0.0 };
                rw = rw.max((aw[q] / vol + c).abs());
                if mask[p] {
                    let dzz = (v.values[q + g2.n_nodes()] - 2.0 * v.values[q] + v.values[q - g2.n_nodes()]) / hz2;
                    rv = rv.max((-kappa * dzz + gamma * (v.values[q] - w.values[q])).abs());
                }
            }
        }
    }
    (rw, rv)
}

/// Unit-coefficient 3D operator helpers.
struct Medium3Like {
    tx: f64,
    tz: f64,
}

impl Medium3Like {
    fn unit(grid: &Grid3) -> Self {
        let h = grid.plane.h;
        let hz = grid.hz();
        Medium3Like { tx: hz, tz: h * h / hz }
    }

    /// `(A u)_i` at interior nodes (zero elsewhere) for the unit coefficient.
    fn apply_full(&self, grid: &Grid3, u: &Field3, out: &mut [f64]) {
        let g2 = grid.plane;
        let n2 = g2.n_nodes();
        for k in 1..grid.nz {
            for j in 1..g2.ny {
                for i in 1..g2.nx {
                    let q = grid.idx(i, j, k);
                    let c = u.values[q];
                    let lat = 4.0 * c - u.values[q - 1] - u.values[q + 1] - u.values[q - g2.nx - 1] - u.values[q + g2.nx + 1];
                    let ver = 2.0 * c - u.values[q - n2] - u.values[q + n2];
                    out[q] = self.tx * lat + self.tz * ver;
                }
            }
        }
    }
}

/// Alternating solves: `W` from the 3D problem with `V` frozen, then `V` column by column.
/// Stops when the sup-norm change of `V` drops below `tol * max(1, |V|_inf)`.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_crosscheck(
    phi_b: &dyn BoundaryData,
    kappa: f64,
    gamma: f64,
    omega0: &Rect,
    grid: &Grid3,
    tol: f64,
    relaxation: f64,
    max_iter: usize,
) -> Result<HomogenizedPair> {
    check_inputs(grid, omega0, kappa, gamma)?;
    if !(relaxation > 0.0 && relaxation <= 1.0) {
        return invalid("relaxation must lie in (0, 1]");
    }
    let g2 = grid.plane;
    let (nx, ny, nz) = (g2.nx, g2.ny, grid.nz);
    let n2 = g2.n_nodes();
    let mask = omega0_mask(grid, omega0);
    let phi = Field3::from_fn(*grid, |x| phi_b.value(x));
    let mut v = lift(grid, phi_b);
    let mut w = phi.clone();
    let vol = grid.cell_volume();
    let unit = Medium3Like::unit(grid);
    // W operator: unit Laplacian plus gamma * volume on omega0 nodes
    let mut st = Stencil::zeros([nx - 1, ny - 1, nz - 1]);
    let mut bnd = vec![0.0; st.len()];
    let row = |i: usize, j: usize, k: usize| (i - 1) + (nx - 1) * ((j - 1) + (ny - 1) * (k - 1));
    for k in 1..nz {
        for j in 1..ny {
            for i in 1..nx {
                let r = row(i, j, k);
                st.diag[r] = 4.0 * unit.tx + 2.0 * unit.tz + if mask[g2.idx(i, j)] { gamma * vol } else { 0.0 };
                let nb = [
                    (i + 1, j, k, 0usize, unit.tx),
                    (i - 1, j, k, 9, unit.tx),
                    (i, j + 1, k, 1, unit.tx),
                    (i, j - 1, k, 9, unit.tx),
                    (i, j, k + 1, 2, unit.tz),
                    (i, j, k - 1, 9, unit.tz),
                ];
                for (a, b, c, dir, t) in nb {
                    if grid.is_boundary(a, b, c) {
                        bnd[r] += t * phi.at(a, b, c);
                    } else if dir < 3 {
                        st.couplings[dir][r] = t;
                    }
                }
            }
        }
    }
    let inner = SolverOptions { tol: (tol * 1e-3).max(1e-14), ..SolverOptions::default() };
    let hz2 = sq(grid.hz());
    let mut reports = Vec::new();
    let mut lower = vec![0.0; nz - 1];
    let mut diag = vec![0.0; nz - 1];
    let mut upper = vec![0.0; nz - 1];
    let mut b = vec![0.0; nz - 1];
    let mut col = vec![0.0; nz - 1];
    for it in 1..=max_iter {
        let mut rhs = bnd.clone();
        for k in 1..nz {
            for j in 1..ny {
                for i in 1..nx {
                    if mask[g2.idx(i, j)] {
                        rhs[row(i, j, k)] += gamma * vol * v.at(i, j, k);
                    }
                }
            }
        }
        let mut x: Vec<f64> = Vec::with_capacity(st.len());
        for k in 1..nz {
            for j in 1..ny {
                for i in 1..nx {
                    x.push(w.at(i, j, k));
                }
            }
        }
        reports.push(pcg(&st, &rhs, &mut x, &inner)?);
        let mut p = 0;
        for k in 1..nz {
            for j in 1..ny {
                for i in 1..nx {
                    w.values[grid.idx(i, j, k)] = x[p];
                    p += 1;
                }
            }
        }
        let mut change: f64 = 0.0;
        let mut vmax: f64 = 1.0;
        for jj in 0..=ny {
            for ii in 0..=nx {
                let q = g2.idx(ii, jj);
                if !mask[q] {
                    continue;
                }
                for k in 1..nz {
                    lower[k - 1] = kappa / hz2;
                    upper[k - 1] = kappa / hz2;
                    diag[k - 1] = 2.0 * kappa / hz2 + gamma;
                    b[k - 1] = gamma * w.values[q + n2 * k];
                }
                b[0] += kappa / hz2 * phi.values[q];
                b[nz - 2] += kappa / hz2 * phi.values[q + n2 * nz];
                lower[0] = 0.0;
                upper[nz - 2] = 0.0;
                solve_tridiagonal(&lower, &diag, &upper, &b, &mut col);
                for k in 1..nz {
                    let old = v.values[q + n2 * k];
                    let new = (1.0 - relaxation) * old + relaxation * col[k - 1];
                    change = change.max((new - old).abs());
                    vmax = vmax.max(new.abs());
                    v.values[q + n2 * k] = new;
                }
            }
        }
        if change <= tol * vmax {
            return finish_pair(grid, w, v, mask, *omega0, kappa, gamma, it, reports);
        }
    }
    Err(Error::NotConverged { iterations: max_iter, residual_history: Vec::new() })
}

/// Axis-aligned box `rect x [z0, z1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub rect: Rect,
    pub z0: f64,
    pub z1: f64,
}

impl Box3 {
    pub fn contains(&self, x: [f64; 3]) -> bool {
        self.rect.contains([x[0], x[1]]) && x[2] >= self.z0 - 1e-12 && x[2] <= self.z1 + 1e-12
    }
}

/// Nodal volume of node `(i, j, k)` (halved on each boundary face).
pub fn node_volume(grid: &Grid3, i: usize, j: usize, k: usize) -> f64 {
    let f = |a: usize, n: usize| if a == 0 || a == n { 0.5 } else { 1.0 };
    grid.cell_volume() * f(i, grid.plane.nx) * f(j, grid.plane.ny) * f(k, grid.nz)
}

/// `gamma int_{Omega'} (V* - W*)^2` by nodal quadrature; `Omega'` must lie in `Omega0`.
pub fn blowup_density(pair: &HomogenizedPair, region: &Box3) -> Result<f64> {
    let r = region.rect;
    let o = pair.omega0;
    if r.x0 < o.x0 || r.x1 > o.x1 || r.y0 < o.y0 || r.y1 > o.y1 {
        return invalid("blow-up region must lie inside omega0");
    }
    let grid = pair.w.grid;
    let mut s = 0.0;
    for k in 0..=grid.nz {
        for j in 0..=grid.plane.ny {
            for i in 0..=grid.plane.nx {
                let x = grid.node(i, j, k);
                if region.contains(x) {
                    let q = grid.idx(i, j, k);
                    s += node_volume(&grid, i, j, k) * sq(pair.v.values[q] - pair.w.values[q]);
                }
            }
        }
    }
    Ok(pair.gamma * s)
}

/// Laplace solution (`gamma = 0` limit of `W*`) used as a reference.
pub fn laplace_reference(phi_b: &dyn BoundaryData, grid: &Grid3, opts: &SolverOptions) -> Result<Field3> {
    let medium = crate::solver3d::Medium3::new(CellCoefficients::uniform(&grid.plane, 1.0));
    Ok(crate::solver3d::solve_dirichlet(grid, &medium, None, &phi_b, opts)?.field)
}

/// Sup-norm difference of two fields on a common grid.
pub fn max_difference(a: &Field3, b: &Field3) -> f64 {
    a.values.iter().zip(&b.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Planar slice helper used by exports.
pub fn layer_difference(pair: &HomogenizedPair, k: usize) -> Field2 {
    pair.v.layer(k).sub(&pair.w.layer(k))
}

//! Planar weighted problem `-div(a grad u) + lambda a u = f + a g + div h` with `u = 0` on the
//! boundary, discretised by vertex-centred finite volumes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::{FiberIndex, FiberLattice};
use crate::linalg::{pcg, SolveReport, SolverOptions, Stencil};
use crate::math::{cos, sin, sq, TAU};
use crate::mesh::{dual_cell_integrals, CellCoefficients, Field2, Grid2, Medium2, Uniform};

/// Sub-samples per cell used for coefficients and loads.
pub const DEFAULT_SUBSAMPLES: usize = 8;

/// Right-hand side terms; `g` is multiplied by the coefficient.
#[derive(Clone, Copy, Default)]
pub struct ModalRhs<'a> {
    pub f: Option<&'a dyn Fn([f64; 2]) -> f64>,
    pub g: Option<&'a dyn Fn([f64; 2]) -> f64>,
    pub h: Option<&'a dyn Fn([f64; 2]) -> [f64; 2]>,
}

/// Fixed nodal values (always including the outer boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet2 {
    pub values: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl Dirichlet2 {
    pub fn boundary(grid: &Grid2, f: impl Fn([f64; 2]) -> f64) -> Self {
        let mut values = vec![0.0; grid.n_nodes()];
        let mut fixed = vec![false; grid.n_nodes()];
        for j in 0..=grid.ny {
            for i in 0..=grid.nx {
                if grid.is_boundary(i, j) {
                    let k = grid.idx(i, j);
                    values[k] = f(grid.node(i, j));
                    fixed[k] = true;
                }
            }
        }
        Dirichlet2 { values, fixed }
    }

    pub fn zero(grid: &Grid2) -> Self {
        Self::boundary(grid, |_| 0.0)
    }

    pub fn fix(&mut self, k: usize, v: f64) {
        self.values[k] = v;
        self.fixed[k] = true;
    }
}

/// Assembles the interior-node operator. `reaction` is the nodal (area-integrated) reaction
/// coefficient and `loads` the nodal load vector; both cover all nodes.
pub fn assemble(grid: &Grid2, coeffs: &CellCoefficients, reaction: &[f64], loads: &[f64], bc: &Dirichlet2) -> (Stencil, Vec<f64>) {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut st = Stencil::zeros([nx - 1, ny - 1, 1]);
    let mut rhs = vec![0.0; st.len()];
    let u = |i: usize, j: usize| (i - 1) + (nx - 1) * (j - 1);
    for j in 1..ny {
        for i in 1..nx {
            let k = grid.idx(i, j);
            let row = u(i, j);
            if bc.fixed[k] {
                st.diag[row] = 1.0;
                rhs[row] = bc.values[k];
                continue;
            }
            let nbrs = [
                (i - 1, j, coeffs.tx(i - 1, j)),
                (i + 1, j, coeffs.tx(i, j)),
                (i, j - 1, coeffs.ty(i, j - 1)),
                (i, j + 1, coeffs.ty(i, j)),
            ];
            let mut d = reaction[k];
            let mut b = loads[k];
            for (a, c, t) in nbrs {
                d += t;
                let kn = grid.idx(a, c);
                if bc.fixed[kn] {
                    b += t * bc.values[kn];
                }
            }
            st.diag[row] = d;
            rhs[row] = b;
            if i + 1 < nx && !bc.fixed[grid.idx(i + 1, j)] {
                st.couplings[0][row] = coeffs.tx(i, j);
            }
            if j + 1 < ny && !bc.fixed[grid.idx(i, j + 1)] {
                st.couplings[1][row] = coeffs.ty(i, j);
            }
        }
    }
    (st, rhs)
}

/// Solves an assembled system and scatters the result into a nodal field.
pub fn solve_assembled(
    grid: &Grid2,
    stencil: &Stencil,
    rhs: &[f64],
    bc: &Dirichlet2,
    initial: Option<&Field2>,
    opts: &SolverOptions,
) -> Result<(Field2, SolveReport)> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut x = vec![0.0; stencil.len()];
    if let Some(f) = initial {
        for j in 1..ny {
            for i in 1..nx {
                x[(i - 1) + (nx - 1) * (j - 1)] = f.at(i, j);
            }
        }
    }
    let report = pcg(stencil, rhs, &mut x, opts)?;
    let mut field = Field2 { grid: *grid, values: bc.values.clone() };
    for j in 1..ny {
        for i in 1..nx {
            let k = grid.idx(i, j);
            if !bc.fixed[k] {
                field.values[k] = x[(i - 1) + (nx - 1) * (j - 1)];
            }
        }
    }
    Ok((field, report))
}

/// `sum_edges T (du)^2 + sum_nodes reaction u^2`.
pub fn discrete_energy(field: &Field2, coeffs: &CellCoefficients, reaction: &[f64]) -> f64 {
    let g = &field.grid;
    let mut e = 0.0;
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let v = field.at(i, j);
            if i < g.nx {
                e += coeffs.tx(i, j) * sq(field.at(i + 1, j) - v);
            }
            if j < g.ny {
                e += coeffs.ty(i, j) * sq(field.at(i, j + 1) - v);
            }
            e += reaction[g.idx(i, j)] * v * v;
        }
    }
    e
}

/// Assembled modal problem with its data.
pub struct ModalSystem {
    pub grid: Grid2,
    pub lambda: f64,
    pub coeffs: CellCoefficients,
    pub reaction: Vec<f64>,
    pub loads: Vec<f64>,
    pub bc: Dirichlet2,
    pub stencil: Stencil,
    pub rhs: Vec<f64>,
    /// `||f||^2`, `||sqrt(a) g||^2`, `||h||^2` by the load quadrature.
    pub data_norms: [f64; 3],
}

/// Nodal loads for `f + a g + div h`; `div h` is applied through the adjoint of the edge gradient.
pub fn modal_loads<M: Medium2 + ?Sized>(grid: &Grid2, medium: &M, rhs: &ModalRhs<'_>, sub: usize) -> (Vec<f64>, [f64; 3]) {
    let mut loads = vec![0.0; grid.n_nodes()];
    let mut norms = [0.0; 3];
    if let Some(f) = rhs.f {
        let l = dual_cell_integrals(grid, f, sub);
        let n2 = dual_cell_integrals(grid, &|x| sq(f(x)), sub);
        loads.iter_mut().zip(&l).for_each(|(a, b)| *a += b);
        norms[0] = n2.iter().sum();
    }
    if let Some(g) = rhs.g {
        let l = dual_cell_integrals(grid, &|x| medium.coefficient(x) * g(x), sub);
        let n2 = dual_cell_integrals(grid, &|x| medium.coefficient(x) * sq(g(x)), sub);
        loads.iter_mut().zip(&l).for_each(|(a, b)| *a += b);
        norms[1] = n2.iter().sum();
    }
    if let Some(hf) = rhs.h {
        let h = grid.h;
        for j in 0..=grid.ny {
            for i in 0..=grid.nx {
                let p = grid.node(i, j);
                if i < grid.nx {
                    let w = hf([p[0] + 0.5 * h, p[1]])[0] * h * edge_weight(j, grid.ny);
                    loads[grid.idx(i, j)] += w;
                    loads[grid.idx(i + 1, j)] -= w;
                }
                if j < grid.ny {
                    let w = hf([p[0], p[1] + 0.5 * h])[1] * h * edge_weight(i, grid.nx);
                    loads[grid.idx(i, j)] += w;
                    loads[grid.idx(i, j + 1)] -= w;
                }
            }
        }
        norms[2] = dual_cell_integrals(grid, &|x| sq(hf(x)[0]) + sq(hf(x)[1]), sub).iter().sum();
    }
    (loads, norms)
}

fn edge_weight(k: usize, n: usize) -> f64 {
    if k == 0 || k == n {
        0.5
    } else {
        1.0
    }
}

/// Builds the modal operator for coefficient `medium`, shift `lambda` and the given data.
pub fn assemble_modal<M: Medium2 + ?Sized>(grid: &Grid2, medium: &M, lambda: f64, rhs: &ModalRhs<'_>) -> Result<ModalSystem> {
    if !(lambda > 0.0) {
        return invalid("modal shift lambda must be positive");
    }
    let coeffs = CellCoefficients::sample(grid, medium, DEFAULT_SUBSAMPLES);
    assemble_modal_with(grid, coeffs, medium, lambda, rhs)
}

/// As [`assemble_modal`] with precomputed cell coefficients.
pub fn assemble_modal_with<M: Medium2 + ?Sized>(
    grid: &Grid2,
    coeffs: CellCoefficients,
    medium: &M,
    lambda: f64,
    rhs: &ModalRhs<'_>,
) -> Result<ModalSystem> {
    let reaction: Vec<f64> = coeffs.node_mass(grid).iter().map(|m| lambda * m).collect();
    let (loads, data_norms) = modal_loads(grid, medium, rhs, DEFAULT_SUBSAMPLES);
    let bc = Dirichlet2::zero(grid);
    let (stencil, b) = assemble(grid, &coeffs, &reaction, &loads, &bc);
    Ok(ModalSystem { grid: *grid, lambda, coeffs, reaction, loads, bc, stencil, rhs: b, data_norms })
}

pub struct ModalSolution {
    pub field: Field2,
    pub report: SolveReport,
}

pub fn solve(system: &ModalSystem, opts: &SolverOptions) -> Result<ModalSolution> {
    let (field, report) = solve_assembled(&system.grid, &system.stencil, &system.rhs, &system.bc, None, opts)?;
    Ok(ModalSolution { field, report })
}

/// `int a |grad u|^2 + lambda int a u^2` in the discrete form.
pub fn energy_norm(system: &ModalSystem, u: &Field2) -> f64 {
    discrete_energy(u, &system.coeffs, &system.reaction)
}

/// Right-hand side of the a priori bound `(C/lambda)(||f||^2 + ||sqrt(a) g||^2) + C ||h||^2`.
pub fn energy_budget(system: &ModalSystem, c: f64) -> f64 {
    let [f2, g2, h2] = system.data_norms;
    c / system.lambda * (f2 + g2) + c * h2
}

/// Same data with `a = 1`.
pub fn background_solve(grid: &Grid2, lambda: f64, rhs: &ModalRhs<'_>, opts: &SolverOptions) -> Result<ModalSolution> {
    let sys = assemble_modal_with(grid, CellCoefficients::uniform(grid, 1.0), &Uniform(1.0), lambda, rhs)?;
    solve(&sys, opts)
}

/// Minimum number of cells per fiber radius accepted by fiber sampling.
pub const MIN_CELLS_PER_RADIUS: f64 = 4.0;

pub fn check_resolution(grid: &Grid2, radius: f64) -> Result<()> {
    let cpr = radius / grid.h;
    if cpr < MIN_CELLS_PER_RADIUS - 1e-9 {
        return Err(Error::Unresolved { radius, h: grid.h, cells_per_radius: cpr });
    }
    Ok(())
}

/// Mean of `u - v` over the fiber boundary circle, sampled at `n_points >= 32` points.
pub fn fiber_average(u: &Field2, v: &Field2, lattice: &FiberLattice, idx: FiberIndex, n_points: usize) -> Result<f64> {
    if n_points < 32 {
        return invalid("fiber averages need at least 32 boundary points");
    }
    if !lattice.contains_index(idx) {
        return invalid("fiber index is not in the lattice");
    }
    let rho = lattice.regime.fiber_radius();
    check_resolution(&u.grid, rho)?;
    let c = lattice.center(idx);
    let mut s = 0.0;
    for k in 0..n_points {
        let th = TAU * k as f64 / n_points as f64;
        let x = [c[0] + rho * cos(th), c[1] + rho * sin(th)];
        let a = u.interpolate(x).ok_or_else(|| Error::InvalidInput("fiber outside grid".into()))?;
        let b = v.interpolate(x).ok_or_else(|| Error::InvalidInput("fiber outside grid".into()))?;
        s += a - b;
    }
    Ok(s / n_points as f64)
}

/// `u - v = u_tilde + u_hat` where `u_tilde` solves the background equation off the fibers with
/// the fiber averages as constant Dirichlet data on the discs.
pub struct SplitSolution {
    pub averages: Vec<(FiberIndex, f64)>,
    pub u_tilde: Field2,
    pub u_hat: Field2,
    pub report: SolveReport,
    /// Nodes constrained to fiber values.
    pub disc_nodes: Vec<(usize, FiberIndex)>,
}

pub fn split_solution(u: &Field2, v: &Field2, lattice: &FiberLattice, lambda: f64, opts: &SolverOptions) -> Result<SplitSolution> {
    let grid = u.grid;
    let mut averages = Vec::new();
    for idx in lattice.indices() {
        averages.push((idx, fiber_average(u, v, lattice, idx, 64)?));
    }
    let mut bc = Dirichlet2::zero(&grid);
    let mut disc_nodes = Vec::new();
    for j in 1..grid.ny {
        for i in 1..grid.nx {
            if let Some(idx) = lattice.fiber_at(grid.node(i, j)) {
                let val = averages.iter().find(|(a, _)| *a == idx).map(|p| p.1).unwrap_or(0.0);
                let k = grid.idx(i, j);
                bc.fix(k, val);
                disc_nodes.push((k, idx));
            }
        }
    }
    let coeffs = CellCoefficients::uniform(&grid, 1.0);
    let reaction: Vec<f64> = coeffs.node_mass(&grid).iter().map(|m| lambda * m).collect();
    let loads = vec![0.0; grid.n_nodes()];
    let (st, rhs) = assemble(&grid, &coeffs, &reaction, &loads, &bc);
    let (u_tilde, report) = solve_assembled(&grid, &st, &rhs, &bc, None, opts)?;
    let mut u_hat = u.sub(v);
    for (a, b) in u_hat.values.iter_mut().zip(&u_tilde.values) {
        *a -= b;
    }
    Ok(SplitSolution { averages, u_tilde, u_hat, report, disc_nodes })
}

/// Nodal residual `A u` with the full stencil (reaction included) at every node, where the
/// operator is that of `a = 1` and shift `lambda`. Non-zero entries mark sources of `u`.
pub fn background_charges(u: &Field2, lambda: f64) -> Vec<f64> {
    let g = &u.grid;
    let coeffs = CellCoefficients::uniform(g, 1.0);
    let mass = coeffs.node_mass(g);
    let mut out = vec![0.0; g.n_nodes()];
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let k = g.idx(i, j);
            let v = u.values[k];
            let mut r = lambda * mass[k] * v;
            // neighbours outside the grid are treated as zero
            let nb = |a: isize, b: isize| -> f64 {
                if a < 0 || b < 0 || a > g.nx as isize || b > g.ny as isize {
                    0.0
                } else {
                    u.at(a as usize, b as usize)
                }
            };
            let (ii, jj) = (i as isize, j as isize);
            for (a, b) in [(ii - 1, jj), (ii + 1, jj), (ii, jj - 1), (ii, jj + 1)] {
                r += v - nb(a, b);
            }
            out[k] = r;
        }
    }
    out
}

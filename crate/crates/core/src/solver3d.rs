//! Three-dimensional Dirichlet problem `-div(a grad W) = F` on the fibered cylinder.
//!
//! The coefficient is independent of `x3` apart from an optional defect made of whole cells.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::{BoundaryData, FiberIndex, FiberLattice};
use crate::linalg::{pcg, SolveReport, SolverOptions, Stencil};
use crate::math::sq;
use crate::mesh::{CellCoefficients, Field3, Grid3};

/// Cells `lo .. lo + dims` (grid cell indices) carrying their own coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectCells {
    pub lo: [usize; 3],
    pub dims: [usize; 3],
    /// Coefficient per cell of the bounding block; `NaN` marks cells outside the defect.
    pub values: Vec<f64>,
}

impl DefectCells {
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        if i < self.lo[0] || j < self.lo[1] || k < self.lo[2] {
            return None;
        }
        let (a, b, c) = (i - self.lo[0], j - self.lo[1], k - self.lo[2]);
        if a >= self.dims[0] || b >= self.dims[1] || c >= self.dims[2] {
            return None;
        }
        let v = self.values[a + self.dims[0] * (b + self.dims[1] * c)];
        (!v.is_nan()).then_some(v)
    }

    /// Cell indices and coefficients of all defect cells.
    pub fn cells(&self) -> Vec<([usize; 3], f64)> {
        let mut out = Vec::new();
        for c in 0..self.dims[2] {
            for b in 0..self.dims[1] {
                for a in 0..self.dims[0] {
                    let v = self.values[a + self.dims[0] * (b + self.dims[1] * c)];
                    if !v.is_nan() {
                        out.push(([self.lo[0] + a, self.lo[1] + b, self.lo[2] + c], v));
                    }
                }
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }
}

/// Coefficient on the cylinder: planar cell coefficients extruded in `x3`, plus a defect.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium3 {
    pub cells: CellCoefficients,
    pub defect: Option<DefectCells>,
}

/// Edge of the grid with its conductance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub dir: usize,
    /// Start and end node indices; the end is the `+dir` neighbour.
    pub a: usize,
    pub b: usize,
    pub start: [usize; 3],
    pub conductance: f64,
}

impl Medium3 {
    pub fn new(cells: CellCoefficients) -> Self {
        Medium3 { cells, defect: None }
    }

    pub fn with_defect(&self, defect: DefectCells) -> Self {
        Medium3 { cells: self.cells.clone(), defect: Some(defect) }
    }

    /// Directional coefficients `(a_x, a_y, a_z)` of cell `(i, j, k)`.
    #[inline]
    pub fn cell(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        if let Some(d) = &self.defect {
            if let Some(v) = d.get(i, j, k) {
                return [v, v, v];
            }
        }
        let c = i + self.cells.nx * j;
        [self.cells.ax[c], self.cells.ay[c], self.cells.mass[c]]
    }

    /// Conductance of the edge leaving node `(i, j, k)` in direction `dir`.
    pub fn conductance(&self, grid: &Grid3, dir: usize, i: usize, j: usize, k: usize) -> f64 {
        let (nx, ny, nz) = (grid.plane.nx, grid.plane.ny, grid.nz);
        let h = grid.plane.h;
        let hz = grid.hz();
        let mut t = 0.0;
        // the two transverse cell offsets
        for p in 0..2usize {
            for q in 0..2usize {
                let (ci, cj, ck) = match dir {
                    0 => (Some(i), (j + p).checked_sub(1), (k + q).checked_sub(1)),
                    1 => ((i + p).checked_sub(1), Some(j), (k + q).checked_sub(1)),
                    _ => ((i + p).checked_sub(1), (j + q).checked_sub(1), Some(k)),
                };
                let (Some(ci), Some(cj), Some(ck)) = (ci, cj, ck) else { continue };
                if ci >= nx || cj >= ny || ck >= nz {
                    continue;
                }
                t += self.cell(ci, cj, ck)[dir];
            }
        }
        if dir == 2 {
            t * h * h / (4.0 * hz)
        } else {
            t * hz / 4.0
        }
    }

    /// Calls `f` for every grid edge.
    pub fn for_each_edge(&self, grid: &Grid3, mut f: impl FnMut(Edge)) {
        let (nx, ny, nz) = (grid.plane.nx, grid.plane.ny, grid.nz);
        let strides = [1, nx + 1, (nx + 1) * (ny + 1)];
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    let a = grid.idx(i, j, k);
                    let lim = [i < nx, j < ny, k < nz];
                    for dir in 0..3 {
                        if lim[dir] {
                            let t = self.conductance(grid, dir, i, j, k);
                            f(Edge { dir, a, b: a + strides[dir], start: [i, j, k], conductance: t });
                        }
                    }
                }
            }
        }
    }
}

/// Edge lengths `(h, h, hz)`.
pub fn edge_lengths(grid: &Grid3) -> [f64; 3] {
    [grid.plane.h, grid.plane.h, grid.hz()]
}

/// Operator on the interior nodes with boundary values taken from `bc`, plus nodal loads.
pub fn assemble(grid: &Grid3, medium: &Medium3, bc: &[f64], loads: Option<&[f64]>) -> (Stencil, Vec<f64>) {
    assemble_weighted(grid, medium, None, bc, loads)
}

/// As [`assemble`], with every conductance multiplied by `weight` at the edge midpoint.
pub fn assemble_weighted(
    grid: &Grid3,
    medium: &Medium3,
    weight: Option<&dyn Fn([f64; 3]) -> f64>,
    bc: &[f64],
    loads: Option<&[f64]>,
) -> (Stencil, Vec<f64>) {
    let lens = edge_lengths(grid);
    let (nx, ny, nz) = (grid.plane.nx, grid.plane.ny, grid.nz);
    let mut st = Stencil::zeros([nx - 1, ny - 1, nz - 1]);
    let mut rhs = vec![0.0; st.len()];
    let unknown = |p: [usize; 3]| -> Option<usize> {
        if grid.is_boundary(p[0], p[1], p[2]) {
            None
        } else {
            Some((p[0] - 1) + (nx - 1) * ((p[1] - 1) + (ny - 1) * (p[2] - 1)))
        }
    };
    medium.for_each_edge(grid, |e| {
        let s = e.start;
        let mut t_end = s;
        t_end[e.dir] += 1;
        let ua = unknown(s);
        let ub = unknown(t_end);
        let t = match weight {
            None => e.conductance,
            Some(w) => {
                let mut mid = grid.node(s[0], s[1], s[2]);
                mid[e.dir] += 0.5 * lens[e.dir];
                e.conductance * w(mid)
            }
        };
        match (ua, ub) {
            (Some(x), Some(y)) => {
                st.diag[x] += t;
                st.diag[y] += t;
                st.couplings[e.dir][x] = t;
            }
            (Some(x), None) => {
                st.diag[x] += t;
                rhs[x] += t * bc[e.b];
            }
            (None, Some(y)) => {
                st.diag[y] += t;
                rhs[y] += t * bc[e.a];
            }
            (None, None) => {}
        }
    });
    if let Some(l) = loads {
        for k in 1..nz {
            for j in 1..ny {
                for i in 1..nx {
                    rhs[(i - 1) + (nx - 1) * ((j - 1) + (ny - 1) * (k - 1))] += l[grid.idx(i, j, k)];
                }
            }
        }
    }
    (st, rhs)
}

pub(crate) fn gather_interior(grid: &Grid3, field: &Field3) -> Vec<f64> {
    let (nx, ny, nz) = (grid.plane.nx, grid.plane.ny, grid.nz);
    let mut x = Vec::with_capacity((nx - 1) * (ny - 1) * (nz - 1));
    for k in 1..nz {
        for j in 1..ny {
            for i in 1..nx {
                x.push(field.at(i, j, k));
            }
        }
    }
    x
}

pub(crate) fn scatter_interior(grid: &Grid3, x: &[f64], field: &mut Field3) {
    let (nx, ny, nz) = (grid.plane.nx, grid.plane.ny, grid.nz);
    let mut p = 0;
    for k in 1..nz {
        for j in 1..ny {
            for i in 1..nx {
                field.values[grid.idx(i, j, k)] = x[p];
                p += 1;
            }
        }
    }
}

pub struct Solution3 {
    pub field: Field3,
    pub report: SolveReport,
}

/// Solves `-div(a grad W) = F`, `W = Phi_b` on the boundary. The initial guess is `Phi_b`
/// evaluated at the interior nodes. `source` is sampled at nodes and lumped.
pub fn solve_dirichlet<B: BoundaryData>(
    grid: &Grid3,
    medium: &Medium3,
    source: Option<&dyn Fn([f64; 3]) -> f64>,
    phi_b: &B,
    opts: &SolverOptions,
) -> Result<Solution3> {
    if medium.cells.nx != grid.plane.nx || medium.cells.ny != grid.plane.ny {
        return invalid("coefficient grid does not match the solver grid");
    }
    let mut field = Field3::from_fn(*grid, |x| phi_b.value(x));
    let loads = source.map(|f| {
        let vol = grid.cell_volume();
        let mut l = vec![0.0; grid.n_nodes()];
        for k in 0..=grid.nz {
            for j in 0..=grid.plane.ny {
                for i in 0..=grid.plane.nx {
                    l[grid.idx(i, j, k)] = f(grid.node(i, j, k)) * vol;
                }
            }
        }
        l
    });
    let (st, rhs) = assemble(grid, medium, &field.values, loads.as_deref());
    let mut x = gather_interior(grid, &field);
    let report = pcg(&st, &rhs, &mut x, opts)?;
    scatter_interior(grid, &x, &mut field);
    Ok(Solution3 { field, report })
}

/// Solves for `delta = W_d - W` where `W` solves the problem for `base` and `W_d` the problem
/// for `perturbed`; both share boundary data, so `delta` vanishes on the boundary.
pub fn solve_perturbation(grid: &Grid3, base: &Medium3, perturbed: &Medium3, w: &Field3, opts: &SolverOptions) -> Result<Solution3> {
    let zero = vec![0.0; grid.n_nodes()];
    let (st, _) = assemble(grid, perturbed, &zero, None);
    let (nx, ny) = (grid.plane.nx, grid.plane.ny);
    let mut rhs = vec![0.0; st.len()];
    // (A - A_d) W restricted to edges touching the defect
    let Some(d) = &perturbed.defect else {
        return invalid("perturbed medium has no defect");
    };
    let strides = [1, nx + 1, (nx + 1) * (ny + 1)];
    let mut seen = alloc::collections::BTreeSet::new();
    for (c, _) in d.cells() {
        for dir in 0..3 {
            for p in 0..2usize {
                for q in 0..2usize {
                    let mut s = c;
                    let (u, v) = match dir {
                        0 => (1, 2),
                        1 => (0, 2),
                        _ => (0, 1),
                    };
                    s[u] += p;
                    s[v] += q;
                    if !seen.insert((dir, s)) {
                        continue;
                    }
                    let t0 = base.conductance(grid, dir, s[0], s[1], s[2]);
                    let t1 = perturbed.conductance(grid, dir, s[0], s[1], s[2]);
                    let a = grid.idx(s[0], s[1], s[2]);
                    let b = a + strides[dir];
                    let flux = (t0 - t1) * (w.values[a] - w.values[b]);
                    let mut e = s;
                    e[dir] += 1;
                    for (node, sign) in [(s, 1.0), (e, -1.0)] {
                        if !grid.is_boundary(node[0], node[1], node[2]) {
                            let row = (node[0] - 1) + (nx - 1) * ((node[1] - 1) + (ny - 1) * (node[2] - 1));
                            rhs[row] += sign * flux;
                        }
                    }
                }
            }
        }
    }
    let mut x = vec![0.0; st.len()];
    let report = pcg(&st, &rhs, &mut x, opts)?;
    let mut field = Field3::zeros(*grid);
    scatter_interior(grid, &x, &mut field);
    Ok(Solution3 { field, report })
}

/// `sum_edges T (dW)^2`, the discrete `int a |grad W|^2`.
pub fn energy(field: &Field3, medium: &Medium3) -> f64 {
    let mut e = 0.0;
    medium.for_each_edge(&field.grid, |ed| {
        e += ed.conductance * sq(field.values[ed.b] - field.values[ed.a]);
    });
    e
}

/// Full-stencil residual `(A W)_i` at every node (boundary nodes included).
pub fn node_residual(field: &Field3, medium: &Medium3) -> Vec<f64> {
    let mut r = vec![0.0; field.values.len()];
    medium.for_each_edge(&field.grid, |e| {
        let f = e.conductance * (field.values[e.a] - field.values[e.b]);
        r[e.a] += f;
        r[e.b] -= f;
    });
    r
}

/// Fiber-wise averages of `W` over each disc at every node layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberTrace {
    pub fibers: Vec<FiberIndex>,
    pub z: Vec<f64>,
    /// `values[f][k]` for fiber `f` and layer `k`.
    pub values: Vec<Vec<f64>>,
}

impl FiberTrace {
    pub fn value(&self, idx: FiberIndex, k: usize) -> Option<f64> {
        self.fibers.iter().position(|f| *f == idx).map(|p| self.values[p][k])
    }
}

/// `V_eps = (pi r^2)^{-1} 1_Q W` reported as the disc average of `W` per fiber and layer,
/// weighting nodes by the fiber fraction of their dual cell.
pub fn rescaled_fiber_trace(field: &Field3, medium: &Medium3, lattice: &FiberLattice) -> FiberTrace {
    let grid = field.grid;
    let g2 = grid.plane;
    let fibers = lattice.indices();
    let mut weights: Vec<(usize, usize, f64)> = Vec::new();
    for j in 0..=g2.ny {
        for i in 0..=g2.nx {
            let mut w = 0.0;
            for (ci, cj) in [(i.wrapping_sub(1), j.wrapping_sub(1)), (i, j.wrapping_sub(1)), (i.wrapping_sub(1), j), (i, j)] {
                if ci < g2.nx && cj < g2.ny {
                    w += medium.cells.fiber_fraction[ci + g2.nx * cj];
                }
            }
            if w > 0.0 {
                if let Some((idx, _)) = lattice.nearest(g2.node(i, j)) {
                    if let Some(p) = fibers.iter().position(|f| *f == idx) {
                        weights.push((g2.idx(i, j), p, w));
                    }
                }
            }
        }
    }
    let nf = fibers.len();
    let mut values = vec![vec![0.0; grid.nz + 1]; nf];
    let mut wsum = vec![0.0; nf];
    for (_, p, w) in &weights {
        wsum[*p] += w;
    }
    let n2 = g2.n_nodes();
    for k in 0..=grid.nz {
        for (node, p, w) in &weights {
            values[*p][k] += w * field.values[node + n2 * k];
        }
        for p in 0..nf {
            if wsum[p] > 0.0 {
                values[p][k] /= wsum[p];
            }
        }
    }
    let z = (0..=grid.nz).map(|k| grid.z(k)).collect();
    FiberTrace { fibers, z, values }
}

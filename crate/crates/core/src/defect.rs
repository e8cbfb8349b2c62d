//! Small conductivity defects: response, polarization tensors and the energy characterisation.
//!
//! A defect is a union of grid cells with conductivity `gamma1` placed in the buffer away from
//! the fibers. All `mu`-integrals use the empirical measure `|G|^{-1} 1_G dx`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoundaryData, FiberLattice, Polynomial};
use crate::homogenized::{Box3, HomogenizedPair};
use crate::linalg::{pcg, sym3_eigenvalues, SolverOptions};
use crate::math::{pow, sq, sqrt};
use crate::mesh::{CellCoefficients, Field3, Grid3};
use crate::solver3d::{
    assemble_weighted, edge_lengths, node_residual, scatter_interior, solve_dirichlet, solve_perturbation, DefectCells,
    Medium3, Solution3,
};

/// Buffer exponent: defect cells keep a horizontal distance `eps^{17/16}` from every fiber.
pub const BUFFER_EXPONENT: f64 = 17.0 / 16.0;

/// Union of boxes with conductivity `gamma1`, confined to `|x3| <= l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectGeometry {
    pub boxes: Vec<Box3>,
    pub gamma1: f64,
    pub l: f64,
}

/// A defect snapped to grid cells: the cells whose centres lie in one of the boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct SnappedDefect {
    pub geometry: DefectGeometry,
    pub cells: DefectCells,
    /// `|G_eps|` of the snapped cells.
    pub volume: f64,
}

impl SnappedDefect {
    pub fn gamma1(&self) -> f64 {
        self.geometry.gamma1
    }
}

/// Snaps `geometry` to the cells of `grid` and validates the buffer condition.
pub fn snap_defect(geometry: &DefectGeometry, lattice: &FiberLattice, grid: &Grid3) -> Result<SnappedDefect> {
    if !(geometry.gamma1 > 0.0) {
        return invalid("defect contrast gamma1 must be positive");
    }
    if !(geometry.l < grid.half_height) {
        return invalid("defect height bound l must be below the half-height L");
    }
    let g2 = grid.plane;
    let hz = grid.hz();
    // strict containment: a centre on a box face is outside
    let inside = |c: [f64; 3]| {
        geometry.boxes.iter().any(|b| {
            let t = 1e-9 * g2.h;
            c[0] > b.rect.x0 + t && c[0] < b.rect.x1 - t && c[1] > b.rect.y0 + t && c[1] < b.rect.y1 - t && c[2] > b.z0 + t && c[2] < b.z1 - t
        })
    };
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for k in 0..grid.nz {
        for j in 0..g2.ny {
            for i in 0..g2.nx {
                let cc = g2.cell_center(i, j);
                let c = [cc[0], cc[1], grid.z(k) + 0.5 * hz];
                if inside(c) {
                    any = true;
                    for (d, v) in [i, j, k].into_iter().enumerate() {
                        lo[d] = lo[d].min(v);
                        hi[d] = hi[d].max(v);
                    }
                }
            }
        }
    }
    if !any {
        return invalid("defect boxes contain no grid cell centre");
    }
    let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let mut values = vec![f64::NAN; dims[0] * dims[1] * dims[2]];
    let buffer = pow(lattice.regime.epsilon, BUFFER_EXPONENT);
    let mut count = 0usize;
    for c in 0..dims[2] {
        for b in 0..dims[1] {
            for a in 0..dims[0] {
                let (i, j, k) = (lo[0] + a, lo[1] + b, lo[2] + c);
                let cc = g2.cell_center(i, j);
                let z0 = grid.z(k);
                if !inside([cc[0], cc[1], z0 + 0.5 * hz]) {
                    continue;
                }
                let x0 = g2.node(i, j);
                for corner in [[0.0, 0.0], [g2.h, 0.0], [0.0, g2.h], [g2.h, g2.h]] {
                    let p = [x0[0] + corner[0], x0[1] + corner[1]];
                    if lattice.dist_to_fibers(p) < buffer {
                        return Err(Error::DefectOutsideBuffer(alloc::format!(
                            "cell ({i}, {j}, {k}) lies within eps^(17/16) = {buffer:.4} of a fiber"
                        )));
                    }
                }
                if z0 < -geometry.l - 1e-12 || z0 + hz > geometry.l + 1e-12 {
                    return Err(Error::DefectOutsideBuffer(alloc::format!("cell ({i}, {j}, {k}) leaves |x3| <= l")));
                }
                values[a + dims[0] * (b + dims[1] * c)] = geometry.gamma1;
                count += 1;
            }
        }
    }
    Ok(SnappedDefect {
        geometry: geometry.clone(),
        cells: DefectCells { lo, dims, values },
        volume: count as f64 * grid.cell_volume(),
    })
}

/// Solves the defective problem directly.
pub fn solve_with_defect<B: BoundaryData>(
    grid: &Grid3,
    base: &Medium3,
    defect: &SnappedDefect,
    phi_b: &B,
    opts: &SolverOptions,
) -> Result<Solution3> {
    solve_dirichlet(grid, &base.with_defect(defect.cells.clone()), None, phi_b, opts)
}

/// `R = int (gamma1 - 1) grad W_d . grad W`, with the boundary-flux form as a cross-check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub volume_form: f64,
    pub flux_form: f64,
}

impl Response {
    pub fn relative_gap(&self) -> f64 {
        (self.volume_form - self.flux_form).abs() / self.volume_form.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn response(w: &Field3, w_d: &Field3, base: &Medium3, perturbed: &Medium3) -> Result<Response> {
    let grid = w.grid;
    if w_d.grid != grid {
        return invalid("W and W_d must share a grid");
    }
    let mut volume_form = 0.0;
    let mut dcells = Vec::new();
    if let Some(d) = &perturbed.defect {
        dcells = d.cells();
    }
    for (dir, s) in defect_edges(&dcells) {
        let t0 = base.conductance(&grid, dir, s[0], s[1], s[2]);
        let t1 = perturbed.conductance(&grid, dir, s[0], s[1], s[2]);
        let (a, b) = edge_nodes(&grid, dir, s);
        volume_form += (t1 - t0) * (w_d.values[b] - w_d.values[a]) * (w.values[b] - w.values[a]);
    }
    // boundary fluxes of the two solutions tested against the data
    let rd = node_residual(w_d, perturbed);
    let r0 = node_residual(w, base);
    let g2 = grid.plane;
    let mut flux_form = 0.0;
    for k in 0..=grid.nz {
        for j in 0..=g2.ny {
            for i in 0..=g2.nx {
                if grid.is_boundary(i, j, k) {
                    let p = grid.idx(i, j, k);
                    flux_form += (rd[p] - r0[p]) * w.values[p];
                }
            }
        }
    }
    Ok(Response { volume_form, flux_form })
}

fn edge_nodes(grid: &Grid3, dir: usize, s: [usize; 3]) -> (usize, usize) {
    let a = grid.idx(s[0], s[1], s[2]);
    let strides = [1, grid.plane.nx + 1, (grid.plane.nx + 1) * (grid.plane.ny + 1)];
    (a, a + strides[dir])
}

/// Edges (direction, start node) adjacent to any of `cells`, without repetition.
fn defect_edges(cells: &[([usize; 3], f64)]) -> Vec<(usize, [usize; 3])> {
    let mut out = alloc::collections::BTreeSet::new();
    for (c, _) in cells {
        for dir in 0..3 {
            let (u, v) = match dir {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for p in 0..2 {
                for q in 0..2 {
                    let mut s = *c;
                    s[u] += p;
                    s[v] += q;
                    out.insert((dir, s));
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Direction-`i` corrector solutions: `v^i` for `Phi_b = x_i` and `delta^i = v^i_d - v^i`.
#[derive(Debug, Clone)]
pub struct CorrectorPair {
    pub direction: usize,
    pub v: Field3,
    pub delta: Field3,
    pub iterations: usize,
}

pub fn corrector_solutions(grid: &Grid3, base: &Medium3, defect: &SnappedDefect, i: usize, opts: &SolverOptions) -> Result<CorrectorPair> {
    if i > 2 {
        return invalid("corrector direction must be 0, 1 or 2");
    }
    let v = solve_dirichlet(grid, base, None, &Polynomial::coordinate(i), opts)?;
    let perturbed = base.with_defect(defect.cells.clone());
    let d = solve_perturbation(grid, base, &perturbed, &v.field, opts)?;
    Ok(CorrectorPair { direction: i, v: v.field, delta: d.field, iterations: v.report.iterations + d.report.iterations })
}

/// `M*` by the two estimators: (A) the defect average of `(1 - gamma1) d_j delta^i`, and (B)
/// the energy form `|G|^{-1} int a_d grad delta^i . grad delta^j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationTensor {
    pub gamma1: f64,
    pub volume: f64,
    pub estimator_a: [[f64; 3]; 3],
    pub estimator_b: [[f64; 3]; 3],
    /// Symmetrised (B).
    pub m_star: [[f64; 3]; 3],
    /// `(gamma1 - 1) Id - M*`.
    pub m: [[f64; 3]; 3],
}

fn frob(m: &[[f64; 3]; 3]) -> f64 {
    sqrt(m.iter().flatten().map(|x| x * x).sum())
}

impl PolarizationTensor {
    /// `||A - B|| / ||B||` in the Frobenius norm.
    pub fn estimator_gap(&self) -> f64 {
        let mut d = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = self.estimator_a[i][j] - self.estimator_b[i][j];
            }
        }
        frob(&d) / frob(&self.estimator_b).max(f64::MIN_POSITIVE)
    }

    /// `||B - B^T|| / ||B||` for the unsymmetrised energy estimator.
    pub fn asymmetry(&self) -> f64 {
        let b = &self.estimator_b;
        let mut d = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = b[i][j] - b[j][i];
            }
        }
        frob(&d) / frob(b).max(f64::MIN_POSITIVE)
    }

    pub fn m_star_eigenvalues(&self) -> [f64; 3] {
        sym3_eigenvalues(&self.m_star)
    }

    pub fn m_eigenvalues(&self) -> [f64; 3] {
        sym3_eigenvalues(&self.m)
    }

    /// `[0, (gamma1 - 1)^2 / gamma1]`.
    pub fn m_star_bounds(&self) -> (f64, f64) {
        (0.0, sq(self.gamma1 - 1.0) / self.gamma1)
    }

    /// `(gamma1 - 1) [min(1, 1/gamma1), max(1, 1/gamma1)]`, ordered.
    pub fn m_bounds(&self) -> (f64, f64) {
        let g = self.gamma1;
        let a = (g - 1.0) * (1.0f64).min(1.0 / g);
        let b = (g - 1.0) * (1.0f64).max(1.0 / g);
        (a.min(b), a.max(b))
    }

    /// `M xi . eta`.
    pub fn m_form(&self, xi: [f64; 3], eta: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.m[i][j] * xi[j] * eta[i];
            }
        }
        s
    }
}

pub fn polarization_tensor(pairs: &[CorrectorPair; 3], base: &Medium3, defect: &SnappedDefect) -> Result<PolarizationTensor> {
    let grid = pairs[0].v.grid;
    for (d, p) in pairs.iter().enumerate() {
        if p.direction != d {
            return invalid("corrector pairs must be ordered by direction");
        }
    }
    let perturbed = base.with_defect(defect.cells.clone());
    let lens = edge_lengths(&grid);
    let g = defect.volume;
    let mut a = [[0.0; 3]; 3];
    for (dir, s) in defect_edges(&defect.cells.cells()) {
        let t0 = base.conductance(&grid, dir, s[0], s[1], s[2]);
        let t1 = perturbed.conductance(&grid, dir, s[0], s[1], s[2]);
        let (na, nb) = edge_nodes(&grid, dir, s);
        for (i, p) in pairs.iter().enumerate() {
            a[i][dir] += (t0 - t1) * (p.delta.values[nb] - p.delta.values[na]) * lens[dir] / g;
        }
    }
    let mut b = [[0.0; 3]; 3];
    perturbed.for_each_edge(&grid, |e| {
        let d: [f64; 3] = core::array::from_fn(|i| pairs[i].delta.values[e.b] - pairs[i].delta.values[e.a]);
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] += e.conductance * d[i] * d[j] / g;
            }
        }
    });
    let gamma1 = defect.gamma1();
    let mut m_star = [[0.0; 3]; 3];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m_star[i][j] = 0.5 * (b[i][j] + b[j][i]);
            m[i][j] = if i == j { gamma1 - 1.0 } else { 0.0 } - m_star[i][j];
        }
    }
    Ok(PolarizationTensor { gamma1, volume: g, estimator_a: a, estimator_b: b, m_star, m })
}

/// `int_G M grad W* . grad W*` with cell gradients of `W*`.
pub fn asymptotic_response(pair: &HomogenizedPair, tensor: &PolarizationTensor, defect: &SnappedDefect) -> f64 {
    let grid = pair.w.grid;
    let vol = grid.cell_volume();
    defect
        .cells
        .cells()
        .iter()
        .map(|(c, _)| {
            let g = pair.w.cell_gradient(c[0], c[1], c[2]);
            vol * tensor.m_form(g, g)
        })
        .sum()
}

/// `int (gamma1 - 1)^2 / gamma1 |xi|^2 psi dmu - |G|^{-1} min_w int a_d |grad w + (gamma1 - 1)/gamma1 1_G xi|^2 psi`,
/// computed from the minimiser `zeta` of the weighted problem.
#[derive(Debug, Clone)]
pub struct EnergyCharacterization {
    pub value: f64,
    /// `int (gamma1 - 1)^2 / gamma1 |xi|^2 psi dmu`.
    pub upper: f64,
    pub zeta: Field3,
}

pub fn energy_characterization(
    grid: &Grid3,
    base: &Medium3,
    defect: &SnappedDefect,
    xi: [f64; 3],
    psi: &dyn Fn([f64; 3]) -> f64,
    opts: &SolverOptions,
) -> Result<EnergyCharacterization> {
    if xi.iter().all(|x| *x == 0.0) {
        return invalid("xi must be nonzero");
    }
    let perturbed = base.with_defect(defect.cells.clone());
    let zero = vec![0.0; grid.n_nodes()];
    let (st, _) = assemble_weighted(grid, &perturbed, Some(psi), &zero, None);
    let (nx, ny) = (grid.plane.nx, grid.plane.ny);
    let lens = edge_lengths(grid);
    let mut rhs = vec![0.0; st.len()];
    for (dir, s) in defect_edges(&defect.cells.cells()) {
        let t0 = base.conductance(grid, dir, s[0], s[1], s[2]);
        let t1 = perturbed.conductance(grid, dir, s[0], s[1], s[2]);
        let mut mid = grid.node(s[0], s[1], s[2]);
        mid[dir] += 0.5 * lens[dir];
        // flux of (1 - gamma1) psi 1_G xi through the edge
        let flux = (t0 - t1) * psi(mid) * xi[dir] * lens[dir];
        let mut e = s;
        e[dir] += 1;
        for (node, sign) in [(s, -1.0), (e, 1.0)] {
            if !grid.is_boundary(node[0], node[1], node[2]) {
                let row = (node[0] - 1) + (nx - 1) * ((node[1] - 1) + (ny - 1) * (node[2] - 1));
                rhs[row] += sign * flux;
            }
        }
    }
    let mut x = vec![0.0; st.len()];
    pcg(&st, &rhs, &mut x, opts)?;
    let value = x.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>() / defect.volume;
    let mut zeta = Field3::zeros(*grid);
    scatter_interior(grid, &x, &mut zeta);
    let vol = grid.cell_volume();
    let gamma1 = defect.gamma1();
    let xi2 = xi.iter().map(|v| v * v).sum::<f64>();
    let upper = defect
        .cells
        .cells()
        .iter()
        .map(|(c, _)| {
            let center = [
                grid.plane.x0 + (c[0] as f64 + 0.5) * grid.plane.h,
                grid.plane.y0 + (c[1] as f64 + 0.5) * grid.plane.h,
                grid.z(c[2]) + 0.5 * grid.hz(),
            ];
            sq(gamma1 - 1.0) / gamma1 * xi2 * psi(center) * vol
        })
        .sum::<f64>()
        / defect.volume;
    Ok(EnergyCharacterization { value, upper, zeta })
}

/// `(||grad delta||_{L^2}, ||delta||_{L^2})` by edge and nodal quadrature with unit weight.
pub fn perturbation_norms(delta: &Field3) -> (f64, f64) {
    let grid = delta.grid;
    let unit = Medium3::new(CellCoefficients::uniform(&grid.plane, 1.0));
    let mut g = 0.0;
    unit.for_each_edge(&grid, |e| g += e.conductance * sq(delta.values[e.b] - delta.values[e.a]));
    let mut l2 = 0.0;
    for k in 0..=grid.nz {
        for j in 0..=grid.plane.ny {
            for i in 0..=grid.plane.nx {
                l2 += crate::homogenized::node_volume(&grid, i, j, k) * sq(delta.at(i, j, k));
            }
        }
    }
    (sqrt(g), sqrt(l2))
}

//! Uniform node-centred grids, nodal fields and cell-wise coefficient sampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::{FiberLattice, Rect};
use crate::math::{floor, round};

/// Square-celled grid over a rectangle; nodes `(i, j)` with `0 <= i <= nx`, `0 <= j <= ny`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2 {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2 {
    pub fn new(rect: Rect, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return invalid("grid needs at least two cells per direction");
        }
        let hx = rect.width() / nx as f64;
        let hy = rect.height() / ny as f64;
        if (hx - hy).abs() > 1e-9 * hx {
            return invalid("grid cells must be square");
        }
        Ok(Grid2 { x0: rect.x0, y0: rect.y0, h: hx, nx, ny })
    }

    /// Grid with spacing as close as possible to `h` (cells stay square).
    pub fn with_spacing(rect: Rect, h: f64) -> Result<Self> {
        let nx = round(rect.width() / h) as usize;
        let ny = round(rect.height() / h) as usize;
        Self::new(rect, nx.max(2), ny.max(2))
    }

    pub fn rect(&self) -> Rect {
        Rect { x0: self.x0, x1: self.x0 + self.h * self.nx as f64, y0: self.y0, y1: self.y0 + self.h * self.ny as f64 }
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i + (self.nx + 1) * j
    }

    #[inline]
    pub fn cell_idx(&self, i: usize, j: usize) -> usize {
        i + self.nx * j
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x0 + self.h * i as f64, self.y0 + self.h * j as f64]
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x0 + self.h * (i as f64 + 0.5), self.y0 + self.h * (j as f64 + 0.5)]
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Cell containing `x` and local coordinates in `[0, 1]^2`.
    pub fn locate(&self, x: [f64; 2]) -> Option<(usize, usize, f64, f64)> {
        let s = (x[0] - self.x0) / self.h;
        let t = (x[1] - self.y0) / self.h;
        let tol = 1e-9;
        if s < -tol || t < -tol || s > self.nx as f64 + tol || t > self.ny as f64 + tol {
            return None;
        }
        let i = (floor(s).max(0.0) as usize).min(self.nx - 1);
        let j = (floor(t).max(0.0) as usize).min(self.ny - 1);
        Some((i, j, (s - i as f64).clamp(0.0, 1.0), (t - j as f64).clamp(0.0, 1.0)))
    }

    /// Node index range `[lo, hi]` along x of nodes inside `[a, b]`.
    pub fn node_range_x(&self, a: f64, b: f64) -> (usize, usize) {
        range(self.x0, self.h, self.nx, a, b)
    }

    pub fn node_range_y(&self, a: f64, b: f64) -> (usize, usize) {
        range(self.y0, self.h, self.ny, a, b)
    }
}

fn range(origin: f64, h: f64, n: usize, a: f64, b: f64) -> (usize, usize) {
    let lo = crate::math::ceil((a - origin) / h - 1e-9).max(0.0) as usize;
    let hi = (floor((b - origin) / h + 1e-9).max(0.0) as usize).min(n);
    (lo, hi)
}

/// Heterogeneous scalar coefficient on the plane.
pub trait Medium2 {
    fn coefficient(&self, x: [f64; 2]) -> f64;

    /// Whether `x` lies in a fiber (used for the fiber fraction of each cell).
    fn in_fiber(&self, _x: [f64; 2]) -> bool {
        false
    }

    /// Constant value on the disc of the given radius, if known to be constant there.
    fn uniform_on_disc(&self, _center: [f64; 2], _radius: f64) -> Option<f64> {
        None
    }
}

/// Constant coefficient.
#[derive(Debug, Clone, Copy)]
pub struct Uniform(pub f64);

impl Medium2 for Uniform {
    fn coefficient(&self, _x: [f64; 2]) -> f64 {
        self.0
    }
    fn uniform_on_disc(&self, _c: [f64; 2], _r: f64) -> Option<f64> {
        Some(self.0)
    }
}

impl Medium2 for FiberLattice {
    fn coefficient(&self, x: [f64; 2]) -> f64 {
        self.coefficient_at(x)
    }
    fn in_fiber(&self, x: [f64; 2]) -> bool {
        self.fiber_at(x).is_some()
    }
    fn uniform_on_disc(&self, c: [f64; 2], radius: f64) -> Option<f64> {
        let Some((_, d)) = self.nearest(c) else {
            return Some(1.0);
        };
        let rho = self.regime.fiber_radius();
        if d - radius > rho {
            Some(1.0)
        } else if d + radius < rho {
            Some(self.regime.alpha)
        } else {
            None
        }
    }
}

/// Per-cell directional conductivities. `ax` is the mean over rows of the harmonic mean along
/// x (and symmetrically for `ay`); `mass` is the plain cell average.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCoefficients {
    pub nx: usize,
    pub ny: usize,
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    pub mass: Vec<f64>,
    pub fiber_fraction: Vec<f64>,
}

impl CellCoefficients {
    pub fn uniform(grid: &Grid2, value: f64) -> Self {
        let n = grid.n_cells();
        CellCoefficients {
            nx: grid.nx,
            ny: grid.ny,
            ax: vec![value; n],
            ay: vec![value; n],
            mass: vec![value; n],
            fiber_fraction: vec![0.0; n],
        }
    }

    /// Samples `sub x sub` midpoints per cell.
    pub fn sample<M: Medium2 + ?Sized>(grid: &Grid2, medium: &M, sub: usize) -> Self {
        let sub = sub.max(1);
        let n = grid.n_cells();
        let mut out = CellCoefficients {
            nx: grid.nx,
            ny: grid.ny,
            ax: vec![0.0; n],
            ay: vec![0.0; n],
            mass: vec![0.0; n],
            fiber_fraction: vec![0.0; n],
        };
        let mut vals = vec![0.0; sub * sub];
        let mut fib = vec![false; sub * sub];
        let half_diag = grid.h * core::f64::consts::FRAC_1_SQRT_2 * 1.0001;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = grid.cell_idx(i, j);
                let center = grid.cell_center(i, j);
                if let Some(v) = medium.uniform_on_disc(center, half_diag) {
                    out.ax[c] = v;
                    out.ay[c] = v;
                    out.mass[c] = v;
                    out.fiber_fraction[c] = if medium.in_fiber(center) { 1.0 } else { 0.0 };
                    continue;
                }
                let base = grid.node(i, j);
                for b in 0..sub {
                    for a in 0..sub {
                        let x = [
                            base[0] + grid.h * (a as f64 + 0.5) / sub as f64,
                            base[1] + grid.h * (b as f64 + 0.5) / sub as f64,
                        ];
                        vals[a + sub * b] = medium.coefficient(x);
                        fib[a + sub * b] = medium.in_fiber(x);
                    }
                }
                let mut ax = 0.0;
                let mut ay = 0.0;
                for r in 0..sub {
                    let mut hx = 0.0;
                    let mut hy = 0.0;
                    for s in 0..sub {
                        hx += 1.0 / vals[s + sub * r];
                        hy += 1.0 / vals[r + sub * s];
                    }
                    ax += sub as f64 / hx;
                    ay += sub as f64 / hy;
                }
                let m = (sub * sub) as f64;
                out.ax[c] = ax / sub as f64;
                out.ay[c] = ay / sub as f64;
                out.mass[c] = vals.iter().sum::<f64>() / m;
                out.fiber_fraction[c] = fib.iter().filter(|f| **f).count() as f64 / m;
            }
        }
        out
    }

    /// Lumped nodal mass `sum_cells mass h^2 / 4`.
    pub fn node_mass(&self, grid: &Grid2) -> Vec<f64> {
        let mut m = vec![0.0; grid.n_nodes()];
        let q = grid.h * grid.h / 4.0;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let v = self.mass[grid.cell_idx(i, j)] * q;
                m[grid.idx(i, j)] += v;
                m[grid.idx(i + 1, j)] += v;
                m[grid.idx(i, j + 1)] += v;
                m[grid.idx(i + 1, j + 1)] += v;
            }
        }
        m
    }

    /// Conductance of the x-edge from node `(i, j)` to `(i + 1, j)`.
    #[inline]
    pub fn tx(&self, i: usize, j: usize) -> f64 {
        let mut t = 0.0;
        if j > 0 {
            t += self.ax[i + self.nx * (j - 1)];
        }
        if j < self.ny {
            t += self.ax[i + self.nx * j];
        }
        0.5 * t
    }

    /// Conductance of the y-edge from node `(i, j)` to `(i, j + 1)`.
    #[inline]
    pub fn ty(&self, i: usize, j: usize) -> f64 {
        let mut t = 0.0;
        if i > 0 {
            t += self.ay[i - 1 + self.nx * j];
        }
        if i < self.nx {
            t += self.ay[i + self.nx * j];
        }
        0.5 * t
    }
}

/// Integrates `f` over the dual cell of every node with `sub x sub` midpoints per cell.
pub fn dual_cell_integrals(grid: &Grid2, f: &dyn Fn([f64; 2]) -> f64, sub: usize) -> Vec<f64> {
    let half = (sub / 2).max(1);
    let mut out = vec![0.0; grid.n_nodes()];
    let w = grid.h * grid.h / (4 * half * half) as f64;
    let step = grid.h / (2 * half) as f64;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let base = grid.node(i, j);
            for (qi, qj) in [(0usize, 0usize), (1, 0), (0, 1), (1, 1)] {
                let mut s = 0.0;
                for b in 0..half {
                    for a in 0..half {
                        let x = [
                            base[0] + step * ((qi * half + a) as f64 + 0.5),
                            base[1] + step * ((qj * half + b) as f64 + 0.5),
                        ];
                        s += f(x);
                    }
                }
                out[grid.idx(i + qi, j + qj)] += s * w;
            }
        }
    }
    out
}

/// Nodal scalar field on a [`Grid2`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    pub grid: Grid2,
    pub values: Vec<f64>,
}

impl Field2 {
    pub fn zeros(grid: Grid2) -> Self {
        Field2 { grid, values: vec![0.0; grid.n_nodes()] }
    }

    pub fn from_fn(grid: Grid2, f: impl Fn([f64; 2]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_nodes());
        for j in 0..=grid.ny {
            for i in 0..=grid.nx {
                values.push(f(grid.node(i, j)));
            }
        }
        Field2 { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Bilinear interpolation.
    pub fn interpolate(&self, x: [f64; 2]) -> Option<f64> {
        let (i, j, s, t) = self.grid.locate(x)?;
        let g = &self.grid;
        let v00 = self.values[g.idx(i, j)];
        let v10 = self.values[g.idx(i + 1, j)];
        let v01 = self.values[g.idx(i, j + 1)];
        let v11 = self.values[g.idx(i + 1, j + 1)];
        Some((1.0 - s) * (1.0 - t) * v00 + s * (1.0 - t) * v10 + (1.0 - s) * t * v01 + s * t * v11)
    }

    /// Gradient of the bilinear interpolant.
    pub fn gradient(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        let (i, j, s, t) = self.grid.locate(x)?;
        let g = &self.grid;
        let v00 = self.values[g.idx(i, j)];
        let v10 = self.values[g.idx(i + 1, j)];
        let v01 = self.values[g.idx(i, j + 1)];
        let v11 = self.values[g.idx(i + 1, j + 1)];
        Some([
            ((1.0 - t) * (v10 - v00) + t * (v11 - v01)) / g.h,
            ((1.0 - s) * (v01 - v00) + s * (v11 - v10)) / g.h,
        ])
    }

    /// Central-difference gradient at a node (one-sided on the boundary).
    pub fn node_gradient(&self, i: usize, j: usize) -> [f64; 2] {
        let g = &self.grid;
        let d = |a: f64, b: f64, span: f64| (b - a) / span;
        let gx = if i == 0 {
            d(self.at(0, j), self.at(1, j), g.h)
        } else if i == g.nx {
            d(self.at(i - 1, j), self.at(i, j), g.h)
        } else {
            d(self.at(i - 1, j), self.at(i + 1, j), 2.0 * g.h)
        };
        let gy = if j == 0 {
            d(self.at(i, 0), self.at(i, 1), g.h)
        } else if j == g.ny {
            d(self.at(i, j - 1), self.at(i, j), g.h)
        } else {
            d(self.at(i, j - 1), self.at(i, j + 1), 2.0 * g.h)
        };
        [gx, gy]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Field2) -> Field2 {
        Field2 { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() }
    }
}

/// Grid on the cylinder `rect x [-half_height, half_height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    pub plane: Grid2,
    pub half_height: f64,
    pub nz: usize,
}

impl Grid3 {
    pub fn new(plane: Grid2, half_height: f64, nz: usize) -> Result<Self> {
        if nz < 2 || !(half_height > 0.0) {
            return invalid("vertical grid needs nz >= 2 and a positive half height");
        }
        Ok(Grid3 { plane, half_height, nz })
    }

    #[inline]
    pub fn hz(&self) -> f64 {
        2.0 * self.half_height / self.nz as f64
    }

    #[inline]
    pub fn z(&self, k: usize) -> f64 {
        -self.half_height + self.hz() * k as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.plane.n_nodes() * (self.nz + 1)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        self.plane.idx(i, j) + self.plane.n_nodes() * k
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let p = self.plane.node(i, j);
        [p[0], p[1], self.z(k)]
    }

    pub fn is_boundary(&self, i: usize, j: usize, k: usize) -> bool {
        self.plane.is_boundary(i, j) || k == 0 || k == self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.plane.h * self.plane.h * self.hz()
    }

    pub fn locate(&self, x: [f64; 3]) -> Option<(usize, usize, usize, f64, f64, f64)> {
        let (i, j, s, t) = self.plane.locate([x[0], x[1]])?;
        let u = (x[2] + self.half_height) / self.hz();
        if u < -1e-9 || u > self.nz as f64 + 1e-9 {
            return None;
        }
        let k = (floor(u).max(0.0) as usize).min(self.nz - 1);
        Some((i, j, k, s, t, (u - k as f64).clamp(0.0, 1.0)))
    }

    /// Node range along z inside `[a, b]`.
    pub fn node_range_z(&self, a: f64, b: f64) -> (usize, usize) {
        range(-self.half_height, self.hz(), self.nz, a, b)
    }
}

/// Nodal scalar field on a [`Grid3`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field3 {
    pub grid: Grid3,
    pub values: Vec<f64>,
}

impl Field3 {
    pub fn zeros(grid: Grid3) -> Self {
        Field3 { grid, values: vec![0.0; grid.n_nodes()] }
    }

    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_nodes());
        for k in 0..=grid.nz {
            for j in 0..=grid.plane.ny {
                for i in 0..=grid.plane.nx {
                    values.push(f(grid.node(i, j, k)));
                }
            }
        }
        Field3 { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.idx(i, j, k)]
    }

    /// Trilinear interpolation.
    pub fn interpolate(&self, x: [f64; 3]) -> Option<f64> {
        let (i, j, k, s, t, u) = self.grid.locate(x)?;
        let mut v = 0.0;
        for (dk, wk) in [(0, 1.0 - u), (1, u)] {
            for (dj, wj) in [(0, 1.0 - t), (1, t)] {
                for (di, wi) in [(0, 1.0 - s), (1, s)] {
                    v += wi * wj * wk * self.at(i + di, j + dj, k + dk);
                }
            }
        }
        Some(v)
    }

    /// Gradient of the trilinear interpolant.
    pub fn gradient(&self, x: [f64; 3]) -> Option<[f64; 3]> {
        let (i, j, k, s, t, u) = self.grid.locate(x)?;
        let h = self.grid.plane.h;
        let hz = self.grid.hz();
        let mut g = [0.0; 3];
        for (dk, wk) in [(0, 1.0 - u), (1, u)] {
            for (dj, wj) in [(0, 1.0 - t), (1, t)] {
                g[0] += wj * wk * (self.at(i + 1, j + dj, k + dk) - self.at(i, j + dj, k + dk)) / h;
            }
        }
        for (dk, wk) in [(0, 1.0 - u), (1, u)] {
            for (di, wi) in [(0, 1.0 - s), (1, s)] {
                g[1] += wi * wk * (self.at(i + di, j + 1, k + dk) - self.at(i + di, j, k + dk)) / h;
            }
        }
        for (dj, wj) in [(0, 1.0 - t), (1, t)] {
            for (di, wi) in [(0, 1.0 - s), (1, s)] {
                g[2] += wi * wj * (self.at(i + di, j + dj, k + 1) - self.at(i + di, j + dj, k)) / hz;
            }
        }
        Some(g)
    }

    /// Gradient at the centre of cell `(i, j, k)`.
    pub fn cell_gradient(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.grid.plane.h;
        let hz = self.grid.hz();
        let mut g = [0.0; 3];
        for a in 0..2 {
            for b in 0..2 {
                g[0] += (self.at(i + 1, j + a, k + b) - self.at(i, j + a, k + b)) / h;
                g[1] += (self.at(i + a, j + 1, k + b) - self.at(i + a, j, k + b)) / h;
                g[2] += (self.at(i + a, j + b, k + 1) - self.at(i + a, j + b, k)) / hz;
            }
        }
        [g[0] / 4.0, g[1] / 4.0, g[2] / 4.0]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Field3) -> Field3 {
        Field3 { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() }
    }

    /// Horizontal slice at node layer `k`.
    pub fn layer(&self, k: usize) -> Field2 {
        let n = self.grid.plane.n_nodes();
        Field2 { grid: self.grid.plane, values: self.values[k * n..(k + 1) * n].to_vec() }
    }
}

/// Coefficient given by a closure.
pub struct FnMedium<F>(pub F);

impl<F: Fn([f64; 2]) -> f64> Medium2 for FnMedium<F> {
    fn coefficient(&self, x: [f64; 2]) -> f64 {
        (self.0)(x)
    }
}

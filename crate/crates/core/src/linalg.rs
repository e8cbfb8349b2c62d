//! Structured symmetric operators on box-shaped index sets and a preconditioned CG solver.
//!
//! An operator couples each unknown to its six axis neighbours:
//! `(A x)_i = diag_i x_i - sum_d c_d[i] x_{i+s_d} - sum_d c_d[i-s_d] x_{i-s_d}`.
//! Couplings that would cross the box boundary are stored as zero.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::math::{dot, sqrt};

#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub dims: [usize; 3],
    pub diag: Vec<f64>,
    /// Couplings to the `+x`, `+y`, `+z` neighbour.
    pub couplings: [Vec<f64>; 3],
}

impl Stencil {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Stencil { dims, diag: vec![0.0; n], couplings: [vec![0.0; n], vec![0.0; n], vec![0.0; n]] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn strides(&self) -> [usize; 3] {
        [1, self.dims[0], self.dims[0] * self.dims[1]]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            y[i] = self.diag[i] * x[i];
        }
        for (d, s) in self.strides().into_iter().enumerate() {
            if n <= s {
                continue;
            }
            let c = &self.couplings[d];
            for i in 0..n - s {
                let t = c[i];
                if t != 0.0 {
                    y[i] -= t * x[i + s];
                    y[i + s] -= t * x[i];
                }
            }
        }
    }

    /// Randomised symmetry and positivity probe. The stencil is symmetric by construction,
    /// so the symmetry half guards against corrupted storage only.
    pub fn probe_spd(&self, seed: u64, samples: usize) -> Result<()> {
        let n = self.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut ax = vec![0.0; n];
        let mut ay = vec![0.0; n];
        for _ in 0..samples {
            for v in x.iter_mut() {
                *v = rng.gen::<f64>() - 0.5;
            }
            for v in y.iter_mut() {
                *v = rng.gen::<f64>() - 0.5;
            }
            self.apply(&x, &mut ax);
            self.apply(&y, &mut ay);
            let xay = dot(&x, &ay);
            let yax = dot(&y, &ax);
            let scale = sqrt(dot(&x, &ax).abs() * dot(&y, &ay).abs()).max(f64::MIN_POSITIVE);
            if (xay - yax).abs() > 1e-10 * scale {
                return Err(Error::NotPositiveDefinite("asymmetric action".into()));
            }
            if !(dot(&x, &ax) > 0.0) {
                return Err(Error::NotPositiveDefinite("non-positive quadratic form".into()));
            }
        }
        if self.diag.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::NotPositiveDefinite("non-positive diagonal".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
    /// Incomplete Cholesky with the stencil's sparsity pattern.
    Ic0,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when `||b - A x|| <= tol ||b||`.
    pub tol: f64,
    pub max_iter: usize,
    pub precond: Preconditioner,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 20_000, precond: Preconditioner::Ic0 }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions { tol, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual after each iteration, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

enum Precond {
    None,
    Jacobi(Vec<f64>),
    Ic0(Vec<f64>),
}

impl Precond {
    fn build(op: &Stencil, kind: Preconditioner) -> Result<Self> {
        Ok(match kind {
            Preconditioner::None => Precond::None,
            Preconditioner::Jacobi => Precond::Jacobi(op.diag.iter().map(|d| 1.0 / d).collect()),
            Preconditioner::Ic0 => {
                let n = op.len();
                let s = op.strides();
                let mut d = op.diag.clone();
                for i in 0..n {
                    let mut v = d[i];
                    for (dir, st) in s.iter().enumerate() {
                        if i >= *st {
                            let c = op.couplings[dir][i - st];
                            if c != 0.0 {
                                v -= c * c / d[i - st];
                            }
                        }
                    }
                    if !(v > 0.0) {
                        return Err(Error::NotPositiveDefinite("IC(0) pivot breakdown".into()));
                    }
                    d[i] = v;
                }
                Precond::Ic0(d)
            }
        })
    }

    fn apply(&self, op: &Stencil, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::None => z.copy_from_slice(r),
            Precond::Jacobi(inv) => {
                for i in 0..r.len() {
                    z[i] = r[i] * inv[i];
                }
            }
            Precond::Ic0(d) => {
                let n = r.len();
                let [s0, s1, s2] = op.strides();
                let [cx, cy, cz] = &op.couplings;
                for i in 0..n {
                    let mut v = r[i];
                    if i >= s0 {
                        v += cx[i - s0] * z[i - s0];
                    }
                    if i >= s1 {
                        v += cy[i - s1] * z[i - s1];
                    }
                    if i >= s2 {
                        v += cz[i - s2] * z[i - s2];
                    }
                    z[i] = v / d[i];
                }
                for i in (0..n).rev() {
                    let mut v = 0.0;
                    if i + s0 < n {
                        v += cx[i] * z[i + s0];
                    }
                    if i + s1 < n {
                        v += cy[i] * z[i + s1];
                    }
                    if i + s2 < n {
                        v += cz[i] * z[i + s2];
                    }
                    z[i] += v / d[i];
                }
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    sqrt(dot(v, v))
}

/// Preconditioned conjugate gradients; `x` holds the initial guess on entry.
pub fn pcg(op: &Stencil, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveReport> {
    let n = op.len();
    if b.len() != n || x.len() != n {
        return invalid("pcg: vector length does not match operator");
    }
    let bnorm = norm(b);
    let mut report = SolveReport::default();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        report.residual_history.push(0.0);
        return Ok(report);
    }
    let pre = Precond::build(op, opts.precond)?;
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    let residual = |x: &[f64], r: &mut [f64], q: &mut [f64]| {
        op.apply(x, q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
    };
    residual(x, &mut r, &mut q);
    let mut res = norm(&r) / bnorm;
    report.residual_history.push(res);
    if res <= opts.tol {
        return Ok(report);
    }
    pre.apply(op, &r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    while report.iterations < opts.max_iter {
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NotPositiveDefinite("p^T A p <= 0 during CG".into()));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        report.iterations += 1;
        res = norm(&r) / bnorm;
        if res <= opts.tol {
            // confirm against the true residual before accepting
            residual(x, &mut r, &mut q);
            res = norm(&r) / bnorm;
            report.residual_history.push(res);
            if res <= opts.tol {
                return Ok(report);
            }
            pre.apply(op, &r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        report.residual_history.push(res);
        pre.apply(op, &r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged { iterations: report.iterations, residual_history: report.residual_history })
}

/// Solves a tridiagonal system `-lo_i x_{i-1} + d_i x_i - up_i x_{i+1} = b_i` (Thomas algorithm).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], b: &[f64], x: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut m = diag[0];
    c[0] = -upper[0] / m;
    d[0] = b[0] / m;
    for i in 1..n {
        m = diag[i] + lower[i] * c[i - 1];
        c[i] = -upper[i] / m;
        d[i] = (b[i] + lower[i] * d[i - 1]) / m;
    }
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
}

/// Eigenvalues of a symmetric 3x3 matrix in ascending order (cyclic Jacobi rotations).
pub fn sym3_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut a = *m;
    for _ in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2] + off;
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / sqrt(t * t + 1.0);
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
        }
    }
    let mut e = [a[0][0], a[1][1], a[2][2]];
    e.sort_by(|x, y| x.total_cmp(y));
    e
}

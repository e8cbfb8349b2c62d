//! Modified Bessel functions, the screened fundamental solution, barrier fluxes and the
//! layer-potential representation of fiber-to-matrix coupling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::FiberLattice;
use crate::math::{cos, exp, log, pow, sin, sq, sqrt, PI, TAU};
use crate::weighted2d::{background_charges, SplitSolution};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `exp(x) K_k(x)` from `int_0^inf exp(-x (cosh t - 1)) cosh(k t) dt` by nested trapezoidal
/// rules; the integrand is analytic so halving the step converges geometrically.
pub fn bessel_k_scaled(k: u32, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return invalid("K_k(x) needs a finite x > 0");
    }
    let kf = k as f64;
    // log of the integrand without the (1 + e^{-2kt})/2 factor
    let phase = |t: f64| -2.0 * x * sq(libm::sinh(0.5 * t)) + kf * t;
    let f = |t: f64| {
        let e = exp(phase(t));
        if k == 0 {
            e
        } else {
            0.5 * e * (1.0 + exp(-2.0 * kf * t))
        }
    };
    let t_peak = libm::asinh(kf / x);
    let p_max = phase(t_peak);
    let mut t_end = t_peak + 1.0;
    while phase(t_end) > p_max - 46.0 {
        t_end += 0.5 + 0.25 * t_end;
    }
    let mut n = 64usize;
    let mut step = t_end / n as f64;
    let mut sum = 0.5 * (f(0.0) + f(t_end));
    for i in 1..n {
        sum += f(step * i as f64);
    }
    let mut est = sum * step;
    for _ in 0..14 {
        let mut mid = 0.0;
        for i in 0..n {
            mid += f(step * (i as f64 + 0.5));
        }
        sum += mid;
        n *= 2;
        step *= 0.5;
        let next = sum * step;
        let done = (next - est).abs() <= 1e-15 * next.abs();
        est = next;
        if done {
            break;
        }
    }
    Ok(est)
}

/// `K_k(x)`; underflows to zero for very large `x`.
pub fn bessel_k(k: u32, x: f64) -> Result<f64> {
    Ok(bessel_k_scaled(k, x)? * exp(-x))
}

fn i_series(k: u32, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    for j in 1..=k {
        term *= 0.5 * x / j as f64;
    }
    let mut sum = term;
    let mut m = 0.0;
    loop {
        m += 1.0;
        term *= q / (m * (m + k as f64));
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    sum
}

fn i_scaled_asymptotic(k: u32, x: f64) -> f64 {
    let mu = 4.0 * sq(k as f64);
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..60 {
        let next = -term * (mu - sq((2 * j - 1) as f64)) / (j as f64 * 8.0 * x);
        if next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / sqrt(TAU * x)
}

/// `exp(-x) I_k(x)` for `x >= 0`.
pub fn bessel_i_scaled(k: u32, x: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return invalid("I_k(x) needs a finite x >= 0");
    }
    if x <= 500.0 {
        Ok(i_series(k, x) * exp(-x))
    } else {
        Ok(i_scaled_asymptotic(k, x))
    }
}

/// `I_k(x)`; beyond the double range the scaled value is returned inside the error.
pub fn bessel_i(k: u32, x: f64) -> Result<f64> {
    let s = bessel_i_scaled(k, x)?;
    let v = s * exp(x);
    if !v.is_finite() {
        return Err(Error::Overflow { scaled: s, exponent: x });
    }
    Ok(v)
}

/// `q^{-1} sum_{j>=1} q^j H_j / (j!)^2` with `q = x^2/4`, so that
/// `K_0 = -(ln(x/2) + gamma_E) I_0 + q S`. Dividing by `q` keeps tiny `x` from underflowing.
fn k0_series_remainder_over_q(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut sum = 0.0;
    for j in 1..200 {
        let jf = j as f64;
        if j > 1 {
            term *= q;
        }
        term /= jf * jf;
        harmonic += 1.0 / jf;
        sum += term * harmonic;
        if term * harmonic <= 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Terms of `K_0 = I_0 (-ln(x/2) - gamma_E + ln(x + e) t/(1+t) R_0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct K0Decomposition {
    pub x: f64,
    pub k0: f64,
    pub i0: f64,
    pub t: f64,
    pub r0: f64,
}

pub fn k0_decomposition(x: f64) -> Result<K0Decomposition> {
    if !(x > 0.0) || x > 700.0 {
        return invalid("K0 decomposition needs 0 < x <= 700");
    }
    let k0 = bessel_k(0, x)?;
    let i0 = bessel_i(0, x)?;
    let t = x * x * exp(x) / (4.0 + pow(x, 2.5) * sqrt(TAU));
    // direct difference cancels badly for small x; the series form is exact there, and both
    // it and t carry a factor x^2/4 that is divided out before it can underflow
    let ratio = if x <= 2.0 {
        let t_over_q = 4.0 * exp(x) / (4.0 + pow(x, 2.5) * sqrt(TAU));
        k0_series_remainder_over_q(x) / i0 / t_over_q
    } else {
        (k0 / i0 + log(0.5 * x) + EULER_GAMMA) / t
    };
    let r0 = ratio * (1.0 + t) / log(x + core::f64::consts::E);
    Ok(K0Decomposition { x, k0, i0, t, r0 })
}

/// `n`-th derivative of `K_0` for `n <= 2`.
pub fn k0_derivative(n: u32, x: f64) -> Result<f64> {
    match n {
        0 => bessel_k(0, x),
        1 => Ok(-bessel_k(1, x)?),
        2 => Ok(bessel_k(0, x)? + bessel_k(1, x)? / x),
        _ => invalid("only derivatives up to order 2 are provided"),
    }
}

/// `K_0(sqrt(lambda) |x|) / (2 pi)`.
pub fn fundamental_solution(lambda: f64, x: [f64; 2]) -> Result<f64> {
    let r = libm::hypot(x[0], x[1]);
    if r == 0.0 {
        return invalid("fundamental solution is singular at the origin");
    }
    if !(lambda > 0.0) {
        return invalid("screening parameter must be positive");
    }
    Ok(bessel_k(0, sqrt(lambda) * r)? / TAU)
}

/// Gradient of [`fundamental_solution`].
pub fn fundamental_solution_gradient(lambda: f64, x: [f64; 2]) -> Result<[f64; 2]> {
    let r = libm::hypot(x[0], x[1]);
    if r == 0.0 {
        return invalid("fundamental solution is singular at the origin");
    }
    let s = sqrt(lambda);
    let d = -s * bessel_k(1, s * r)? / TAU;
    Ok([d * x[0] / r, d * x[1] / r])
}

/// Two-Bessel barrier `psi = alpha I_0(sqrt(lambda) s) + beta K_0(sqrt(lambda) s)` with
/// `psi(eps r) = u` and `psi(eps/2) = m`. Coefficients are stored pre-scaled:
/// `alpha_s = alpha I_0(b)` and `beta_s = beta K_0(a)` with `a = sqrt(lambda) eps r`,
/// `b = sqrt(lambda) eps / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barrier {
    pub lambda: f64,
    pub inner: f64,
    pub outer: f64,
    pub alpha_scaled: f64,
    pub beta_scaled: f64,
    /// `|psi'(eps r)|`.
    pub flux: f64,
}

impl Barrier {
    pub fn value(&self, s: f64) -> Result<f64> {
        let z = sqrt(self.lambda);
        let (a, b) = (z * self.inner, z * self.outer);
        let ri = exp(z * s - b) * bessel_i_scaled(0, z * s)? / bessel_i_scaled(0, b)?;
        let rk = exp(a - z * s) * bessel_k_scaled(0, z * s)? / bessel_k_scaled(0, a)?;
        Ok(self.alpha_scaled * ri + self.beta_scaled * rk)
    }
}

pub fn barrier_flux(lambda: f64, epsilon: f64, r_eps: f64, u: f64, m: f64) -> Result<Barrier> {
    if !(lambda > 0.0 && epsilon > 0.0 && r_eps > 0.0 && r_eps < 0.5) {
        return invalid("barrier needs lambda > 0, eps > 0 and 0 < r < 1/2");
    }
    let z = sqrt(lambda);
    let inner = epsilon * r_eps;
    let outer = 0.5 * epsilon;
    let (a, b) = (z * inner, z * outer);
    let (ia, ib) = (bessel_i_scaled(0, a)?, bessel_i_scaled(0, b)?);
    let (ka, kb) = (bessel_k_scaled(0, a)?, bessel_k_scaled(0, b)?);
    // I_0(a)/I_0(b) and K_0(b)/K_0(a), both below one
    let p = exp(a - b) * ia / ib;
    let q = exp(a - b) * kb / ka;
    let det = 1.0 - p * q;
    let alpha_scaled = (m - q * u) / det;
    let beta_scaled = (u - p * m) / det;
    let i1a = bessel_i_scaled(1, a)?;
    let k1a = bessel_k_scaled(1, a)?;
    let dpsi = alpha_scaled * z * exp(a - b) * i1a / ib - beta_scaled * z * k1a / ka;
    Ok(Barrier { lambda, inner, outer, alpha_scaled, beta_scaled, flux: dpsi.abs() })
}

/// Regime function `theta(lambda, eps)` bounding barrier fluxes. In the middle regime the
/// exponent is `ln(sqrt(lambda) eps) / ln(1/r)`, which runs from 0 to 1 across the regime.
pub fn theta(lambda: f64, epsilon: f64, r_eps: f64) -> Result<f64> {
    if !(lambda > 0.0 && epsilon > 0.0 && r_eps > 0.0 && r_eps < 1.0) {
        return invalid("theta needs lambda > 0, eps > 0 and 0 < r < 1");
    }
    let z = sqrt(lambda);
    if z * epsilon <= 1.0 {
        Ok(epsilon / r_eps)
    } else if z * epsilon * r_eps < 1.0 {
        let a = log(z * epsilon) / log(1.0 / r_eps);
        Ok(epsilon / (r_eps * (1.0 - a + epsilon * epsilon)))
    } else {
        Ok(z)
    }
}

/// Truncated exterior expansion and the ratio-bound estimate of the omitted tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExteriorDecay {
    pub value: f64,
    /// `2^{N+1} r^{-N} (|a_N| + |b_N|)` for the last retained order `N`.
    pub tail_bound: f64,
}

/// `K_k(sqrt(s) r) / K_k(sqrt(s))`.
pub fn k_ratio(k: u32, s: f64, r: f64) -> Result<f64> {
    let z = sqrt(s);
    Ok(exp(z - z * r) * bessel_k_scaled(k, z * r)? / bessel_k_scaled(k, z)?)
}

/// `sum_k K_k(sqrt(s) r)/K_k(sqrt(s)) (a_k cos k theta + b_k sin k theta)` for `r >= 1`.
pub fn exterior_decay(a: &[f64], b: &[f64], s: f64, r: f64, th: f64) -> Result<ExteriorDecay> {
    if a.len() != b.len() || a.is_empty() {
        return invalid("coefficient arrays must be non-empty and of equal length");
    }
    if !(r >= 1.0 && s > 0.0) {
        return invalid("exterior expansion needs r >= 1 and s > 0");
    }
    let mut value = 0.0;
    for k in 0..a.len() {
        let ratio = k_ratio(k as u32, s, r)?;
        let kf = k as f64;
        value += ratio * (a[k] * cos(kf * th) + b[k] * sin(kf * th));
    }
    let n = a.len() - 1;
    let tail_bound = pow(2.0, (n + 1) as f64) / pow(r, n as f64) * (a[n].abs() + b[n].abs());
    Ok(ExteriorDecay { value, tail_bound })
}

/// `L^2(S^1)` norm of the trace with Fourier coefficients `(a_k, b_k)`.
pub fn trace_norm(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 2.0 * PI * a[0] * a[0];
    for k in 1..a.len() {
        s += PI * (a[k] * a[k] + b[k] * b[k]);
    }
    sqrt(s)
}

/// Number of angular Fourier modes used for the single-layer density on each fiber.
const DENSITY_MODES: usize = 6;

/// Green representation of the off-fiber part `u_tilde` at `x`, built from the discrete
/// boundary fluxes of `split.u_tilde` and the screened fundamental solution.
pub fn layer_potential_probe(split: &SplitSolution, lattice: &FiberLattice, lambda: f64, x: [f64; 2], n_quad: usize) -> Result<f64> {
    if n_quad < 32 {
        return invalid("layer potentials need at least 32 quadrature points per fiber");
    }
    let u = &split.u_tilde;
    let grid = u.grid;
    let charges = background_charges(u, lambda);
    let mut val = 0.0;
    // outer boundary: single layer only, the trace is zero
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            if grid.is_boundary(i, j) {
                let q = charges[grid.idx(i, j)];
                if q != 0.0 {
                    let y = grid.node(i, j);
                    val += q * fundamental_solution(lambda, [x[0] - y[0], x[1] - y[1]])?;
                }
            }
        }
    }
    let rho = lattice.regime.fiber_radius();
    let node_area = grid.h * grid.h;
    for (idx, u_mn) in &split.averages {
        let c = lattice.center(*idx);
        let mut modes = [[0.0f64; 2]; DENSITY_MODES];
        for (k, fid) in &split.disc_nodes {
            if fid != idx {
                continue;
            }
            let flux = charges[*k] - lambda * node_area * u.values[*k];
            if flux == 0.0 {
                continue;
            }
            let i = k % (grid.nx + 1);
            let j = k / (grid.nx + 1);
            let p = grid.node(i, j);
            let th = libm::atan2(p[1] - c[1], p[0] - c[0]);
            for (m, mode) in modes.iter_mut().enumerate() {
                mode[0] += flux * cos(m as f64 * th);
                mode[1] += flux * sin(m as f64 * th);
            }
        }
        let dth = TAU / n_quad as f64;
        for q in 0..n_quad {
            let th = dth * q as f64;
            let mut dens = modes[0][0];
            for (m, mode) in modes.iter().enumerate().skip(1) {
                dens += 2.0 * (mode[0] * cos(m as f64 * th) + mode[1] * sin(m as f64 * th));
            }
            dens /= TAU * rho;
            let nrm = [cos(th), sin(th)];
            let y = [c[0] + rho * nrm[0], c[1] + rho * nrm[1]];
            let d = [x[0] - y[0], x[1] - y[1]];
            let phi = fundamental_solution(lambda, d)?;
            // gradient in y equals minus the gradient in x; the normal points into the disc
            let gx = fundamental_solution_gradient(lambda, d)?;
            let dn = gx[0] * nrm[0] + gx[1] * nrm[1];
            val += (dens * phi - u_mn * dn) * rho * dth;
        }
    }
    Ok(val)
}

/// Which bound a calibration constant belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundId {
    /// `|K_0(x)| <= C (1 + |ln x|) / (1 + x^2)`.
    K0Log,
    /// `|K_0'(x)| <= C / (x (1 + x^2))`.
    K0Derivative1,
    /// `|K_0''(x)| <= C / (x^2 (1 + x^2))`.
    K0Derivative2,
    /// `flux <= C theta(lambda, eps) max(|u|, M)`.
    BarrierFlux,
    /// `|exterior expansion| <= C exp(-sqrt(s) r / 4) ||trace||` for `r >= 3`.
    ExteriorDecay,
}

impl BoundId {
    pub fn name(&self) -> &'static str {
        match self {
            BoundId::K0Log => "k0-log",
            BoundId::K0Derivative1 => "k0-derivative-1",
            BoundId::K0Derivative2 => "k0-derivative-2",
            BoundId::BarrierFlux => "barrier-flux",
            BoundId::ExteriorDecay => "exterior-decay",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|b| b.name() == name)
    }

    pub fn all() -> [BoundId; 5] {
        [BoundId::K0Log, BoundId::K0Derivative1, BoundId::K0Derivative2, BoundId::BarrierFlux, BoundId::ExteriorDecay]
    }
}

/// A fitted constant together with the sample grid it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub id: BoundId,
    pub constant: f64,
    pub grid: Vec<f64>,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| exp(log(lo) + (log(hi) - log(lo)) * i as f64 / (n - 1) as f64)).collect()
}

/// Decay exponent used in the `K_0` bounds.
pub const K0_BOUND_ALPHA: f64 = 2.0;

/// Right-hand side profile of the `n`-th `K_0` bound without its constant. For `n = 0` the
/// factor `|ln x|` is replaced by `1 + |ln x|`, since `K_0(1) > 0`.
pub fn k0_bound_profile(n: u32, x: f64) -> f64 {
    let tail = 1.0 + pow(x, K0_BOUND_ALPHA);
    if n == 0 {
        (1.0 + log(x).abs()) / tail
    } else {
        1.0 / (pow(x, n as f64) * tail)
    }
}

/// Largest `|K_0^{(n)}(x)| / profile(x)` over the grid.
pub fn k0_bound_ratio(n: u32, xs: &[f64]) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &x in xs {
        c = c.max(k0_derivative(n, x)?.abs() / k0_bound_profile(n, x));
    }
    Ok(c)
}

/// Largest `flux / (theta max(|u|, M))` over the grid of `(lambda, eps)` pairs and data pairs.
pub fn barrier_ratio(lambdas: &[f64], epsilons: &[f64], r_eps: f64) -> Result<f64> {
    let data = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0), (0.3, 1.0)];
    let mut c: f64 = 0.0;
    for &l in lambdas {
        for &e in epsilons {
            let th = theta(l, e, r_eps)?;
            for (u, m) in data {
                let b = barrier_flux(l, e, r_eps, u, m)?;
                c = c.max(b.flux / (th * f64::max(f64::abs(u), m)));
            }
        }
    }
    Ok(c)
}

/// Largest `|value| exp(sqrt(s) r / 4) / ||trace||` over pseudo-random traces.
pub fn exterior_decay_ratio(ss: &[f64], rs: &[f64], traces: &[(Vec<f64>, Vec<f64>)], n_angle: usize) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &s in ss {
        for &r in rs {
            for (a, b) in traces {
                let nrm = trace_norm(a, b);
                for q in 0..n_angle {
                    let th = TAU * q as f64 / n_angle as f64;
                    let v = exterior_decay(a, b, s, r, th)?.value;
                    c = c.max(v.abs() * exp(sqrt(s) * r / 4.0) / nrm);
                }
            }
        }
    }
    Ok(c)
}

/// Smallest `C` with `|value| <= C exp(-sqrt(s) r / 4) ||trace||` for every trace of order at
/// most `order` and every sampled `(s, r)`: by Cauchy-Schwarz the worst trace gives
/// `sqrt(rho_0^2 / (2 pi) + sum_k rho_k^2 / pi)` with `rho_k` the Bessel ratios.
pub fn exterior_decay_constant(ss: &[f64], rs: &[f64], order: u32) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &s in ss {
        for &r in rs {
            let mut acc = sq(k_ratio(0, s, r)?) / TAU;
            for k in 1..=order {
                acc += sq(k_ratio(k, s, r)?) / PI;
            }
            c = c.max(sqrt(acc) * exp(sqrt(s) * r / 4.0));
        }
    }
    Ok(c)
}

/// Orders kept by the exterior-decay calibration.
pub const EXTERIOR_DECAY_ORDER: u32 = 32;

/// Traces with decaying pseudo-random coefficients (fixed seed).
pub fn sample_traces(count: usize, order: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut a = vec![0.0; order + 1];
            let mut b = vec![0.0; order + 1];
            for k in 0..=order {
                let w = 1.0 / (1.0 + k as f64);
                a[k] = w * (rng.gen::<f64>() - 0.5);
                if k > 0 {
                    b[k] = w * (rng.gen::<f64>() - 0.5);
                }
            }
            (a, b)
        })
        .collect()
}

/// Reference grids used by [`calibrate`].
pub fn calibration_grid(id: BoundId) -> Vec<f64> {
    match id {
        BoundId::K0Log | BoundId::K0Derivative1 | BoundId::K0Derivative2 => log_grid(1e-4, 50.0, 400),
        BoundId::BarrierFlux => {
            let mut g = log_grid(1e-2, 1e6, 33);
            g.extend_from_slice(&[0.5, 0.35, 0.25, 0.125]);
            g
        }
        BoundId::ExteriorDecay => {
            let mut g = log_grid(0.1, 100.0, 13);
            g.extend_from_slice(&[3.0, 4.0, 6.0, 8.0, 12.0]);
            g
        }
    }
}

/// Fits the constant of a bound on its reference grid.
pub fn calibrate(id: BoundId) -> Result<Calibration> {
    let grid = calibration_grid(id);
    let constant = match id {
        BoundId::K0Log => k0_bound_ratio(0, &grid)?,
        BoundId::K0Derivative1 => k0_bound_ratio(1, &grid)?,
        BoundId::K0Derivative2 => k0_bound_ratio(2, &grid)?,
        BoundId::BarrierFlux => barrier_ratio(&grid[..33], &grid[33..], 0.05)?,
        BoundId::ExteriorDecay => exterior_decay_constant(&grid[..13], &grid[13..], EXTERIOR_DECAY_ORDER)?,
    };
    Ok(Calibration { id, constant, grid })
}

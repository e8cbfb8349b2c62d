//! Scaling regime, periodic fiber lattice, capacity cutoff and boundary-data splitting.
//!
//! Fibers are closed discs of radius `eps * r_eps` centred at `(m eps, n eps)`; only discs
//! entirely contained in the closed rectangle `omega0` belong to the lattice.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{ceil, exp, floor, log, norm2, pow, round, sq, PI, TAU};

/// Tolerance used for closed containment tests against floating-point rounding.
const GEOM_TOL: f64 = 1e-12;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) || !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
            return invalid("rectangle needs x0 < x1 and y0 < y1");
        }
        Ok(Rect { x0, x1, y0, y1 })
    }

    /// Square `(-half, half)^2`.
    pub fn centered(half: f64) -> Self {
        Rect { x0: -half, x1: half, y0: -half, y1: half }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 - GEOM_TOL
            && p[0] <= self.x1 + GEOM_TOL
            && p[1] >= self.y0 - GEOM_TOL
            && p[1] <= self.y1 + GEOM_TOL
    }

    /// `other` lies in the open interior of `self`.
    pub fn compactly_contains(&self, other: &Rect) -> bool {
        other.x0 > self.x0 && other.x1 < self.x1 && other.y0 > self.y0 && other.y1 < self.y1
    }
}

/// Which scaling parameter is held fixed; the other is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinMode {
    Gamma,
    Radius,
}

/// Parameters `(eps, r_eps, alpha_eps, kappa, gamma, sigma)` tied by
/// `alpha pi r^2 = kappa` and `gamma = 2 pi / (eps^2 |ln r|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRegime {
    pub epsilon: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub r_eps: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub pin: PinMode,
}

/// `r = exp(-2 pi / (gamma eps^2))`; errors when the result underflows.
pub fn derive_radius(epsilon: f64, gamma: f64) -> Result<f64> {
    if !(epsilon > 0.0 && gamma > 0.0) {
        return invalid("derive_radius needs epsilon > 0 and gamma > 0");
    }
    let exponent = -TAU / (gamma * epsilon * epsilon);
    let r = exp(exponent);
    if !(r >= f64::MIN_POSITIVE) {
        return Err(Error::RadiusUnderflow { epsilon, gamma });
    }
    Ok(r)
}

/// `gamma = 2 pi / (eps^2 |ln r|)` for `0 < r < 1`.
pub fn derive_gamma(epsilon: f64, r_eps: f64) -> Result<f64> {
    if !(epsilon > 0.0 && r_eps > 0.0 && r_eps < 1.0) {
        return invalid("derive_gamma needs epsilon > 0 and 0 < r < 1");
    }
    Ok(TAU / (epsilon * epsilon * (-log(r_eps))))
}

/// `alpha = kappa / (pi r^2)`.
pub fn derive_conductivity(kappa: f64, r_eps: f64) -> Result<f64> {
    if !(kappa > 0.0 && r_eps > 0.0) {
        return invalid("derive_conductivity needs kappa > 0 and r > 0");
    }
    Ok(kappa / (PI * r_eps * r_eps))
}

impl ScalingRegime {
    /// Pins `gamma`; `r_eps` follows from the capacity relation.
    pub fn with_gamma(epsilon: f64, kappa: f64, gamma: f64, sigma: f64) -> Result<Self> {
        let r_eps = derive_radius(epsilon, gamma)?;
        Self::finish(epsilon, kappa, gamma, r_eps, sigma, PinMode::Gamma)
    }

    /// Pins `r_eps`; `gamma` follows from the capacity relation.
    pub fn with_radius(epsilon: f64, kappa: f64, r_eps: f64, sigma: f64) -> Result<Self> {
        let gamma = derive_gamma(epsilon, r_eps)?;
        Self::finish(epsilon, kappa, gamma, r_eps, sigma, PinMode::Radius)
    }

    /// `eps = 0.25`, `r_eps = 0.05`, `kappa = 1`, `sigma = 1`.
    pub fn canonical() -> Self {
        Self::with_radius(0.25, 1.0, 0.05, 1.0).expect("canonical regime is valid")
    }

    fn finish(epsilon: f64, kappa: f64, gamma: f64, r_eps: f64, sigma: f64, pin: PinMode) -> Result<Self> {
        if !(r_eps < 0.5) {
            return invalid("r_eps must be below 1/2 so that fibers stay disjoint");
        }
        if !(sigma >= 1.0) {
            return invalid("sigma must be at least 1");
        }
        let alpha = derive_conductivity(kappa, r_eps)?;
        let reg = ScalingRegime { epsilon, kappa, gamma, r_eps, alpha, sigma, pin };
        if !(reg.cutoff_radius() > reg.fiber_radius()) {
            return invalid("cutoff radius eps^sigma/2 must exceed the fiber radius");
        }
        Ok(reg)
    }

    /// Same regime with another cutoff exponent.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::finish(self.epsilon, self.kappa, self.gamma, self.r_eps, sigma, self.pin)
    }

    /// Physical fiber radius `eps r_eps`.
    pub fn fiber_radius(&self) -> f64 {
        self.epsilon * self.r_eps
    }

    /// Outer radius `eps^sigma / 2` of the capacity cutoff.
    pub fn cutoff_radius(&self) -> f64 {
        pow(self.epsilon, self.sigma) / 2.0
    }

    /// `ln(eps^sigma/2) - ln(eps r_eps)`.
    pub fn capacity_log_width(&self) -> f64 {
        log(self.cutoff_radius()) - log(self.fiber_radius())
    }
}

/// Log-linear cutoff profile as a function of the distance `r` to a fiber centre.
pub fn capacity_profile(r: f64, inner: f64, outer: f64) -> f64 {
    if r <= inner {
        0.0
    } else if r >= outer {
        1.0
    } else {
        (log(r) - log(inner)) / (log(outer) - log(inner))
    }
}

/// Derivative of [`capacity_profile`] with respect to `r`.
pub fn capacity_profile_derivative(r: f64, inner: f64, outer: f64) -> f64 {
    if r <= inner || r >= outer {
        0.0
    } else {
        1.0 / (r * (log(outer) - log(inner)))
    }
}

/// Lattice index pair `(m, n)`.
pub type FiberIndex = (i64, i64);

/// Periodic lattice of discs contained in `omega0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberLattice {
    pub regime: ScalingRegime,
    pub omega: Rect,
    pub omega0: Rect,
    m_range: (i64, i64),
    n_range: (i64, i64),
}

impl FiberLattice {
    /// Enumerates every disc fully inside `omega0`. An empty lattice is not an error; callers
    /// should inspect [`FiberLattice::is_empty`].
    pub fn build(regime: ScalingRegime, omega: Rect, omega0: Rect) -> Result<Self> {
        if !omega.compactly_contains(&omega0) {
            return invalid("omega0 must be compactly contained in omega");
        }
        let e = regime.epsilon;
        let rho = regime.fiber_radius();
        let range = |lo: f64, hi: f64| {
            let a = ceil((lo + rho) / e - GEOM_TOL) as i64;
            let b = floor((hi - rho) / e + GEOM_TOL) as i64;
            (a, b)
        };
        let m_range = range(omega0.x0, omega0.x1);
        let n_range = range(omega0.y0, omega0.y1);
        Ok(FiberLattice { regime, omega, omega0, m_range, n_range })
    }

    pub fn len(&self) -> usize {
        let cm = (self.m_range.1 - self.m_range.0 + 1).max(0) as usize;
        let cn = (self.n_range.1 - self.n_range.0 + 1).max(0) as usize;
        cm * cn
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_index(&self, idx: FiberIndex) -> bool {
        idx.0 >= self.m_range.0 && idx.0 <= self.m_range.1 && idx.1 >= self.n_range.0 && idx.1 <= self.n_range.1
    }

    pub fn center(&self, idx: FiberIndex) -> [f64; 2] {
        [idx.0 as f64 * self.regime.epsilon, idx.1 as f64 * self.regime.epsilon]
    }

    /// All lattice indices in row-major order (n outer, m inner).
    pub fn indices(&self) -> Vec<FiberIndex> {
        let mut out = Vec::with_capacity(self.len());
        for n in self.n_range.0..=self.n_range.1 {
            for m in self.m_range.0..=self.m_range.1 {
                out.push((m, n));
            }
        }
        out
    }

    /// Nearest lattice index belonging to the lattice, with the distance to its centre.
    pub fn nearest(&self, x: [f64; 2]) -> Option<(FiberIndex, f64)> {
        if self.is_empty() {
            return None;
        }
        let e = self.regime.epsilon;
        let m = (round(x[0] / e) as i64).clamp(self.m_range.0, self.m_range.1);
        let n = (round(x[1] / e) as i64).clamp(self.n_range.0, self.n_range.1);
        let c = self.center((m, n));
        Some(((m, n), norm2([x[0] - c[0], x[1] - c[1]])))
    }

    /// Fiber containing `x` (closed disc), if any.
    pub fn fiber_at(&self, x: [f64; 2]) -> Option<FiberIndex> {
        let (idx, d) = self.nearest(x)?;
        (d <= self.regime.fiber_radius()).then_some(idx)
    }

    /// `a_eps(x)`: `alpha` inside fibers, 1 elsewhere.
    pub fn coefficient_at(&self, x: [f64; 2]) -> f64 {
        if self.fiber_at(x).is_some() {
            self.regime.alpha
        } else {
            1.0
        }
    }

    /// Distance from `x` to the union of fiber discs (0 inside a disc).
    pub fn dist_to_fibers(&self, x: [f64; 2]) -> f64 {
        match self.nearest(x) {
            None => f64::INFINITY,
            Some((_, d)) => (d - self.regime.fiber_radius()).max(0.0),
        }
    }

    /// Capacity cutoff `c_eps^sigma(x)` for the regime's `sigma`.
    pub fn capacity(&self, x: [f64; 2]) -> f64 {
        self.capacity_sigma(x, self.regime.sigma)
    }

    /// Capacity cutoff for an explicit `sigma >= 1`.
    pub fn capacity_sigma(&self, x: [f64; 2], sigma: f64) -> f64 {
        if !self.omega0.contains(x) {
            return 1.0;
        }
        match self.nearest(x) {
            None => 1.0,
            Some((_, d)) => {
                capacity_profile(d, self.regime.fiber_radius(), pow(self.regime.epsilon, sigma) / 2.0)
            }
        }
    }

    /// Gradient of the capacity cutoff (zero outside the annuli).
    pub fn capacity_gradient(&self, x: [f64; 2]) -> [f64; 2] {
        if !self.omega0.contains(x) {
            return [0.0, 0.0];
        }
        let Some((idx, d)) = self.nearest(x) else {
            return [0.0, 0.0];
        };
        let dc = capacity_profile_derivative(d, self.regime.fiber_radius(), self.regime.cutoff_radius());
        if dc == 0.0 {
            return [0.0, 0.0];
        }
        let c = self.center(idx);
        [dc * (x[0] - c[0]) / d, dc * (x[1] - c[1]) / d]
    }

    /// Centre of the cutoff cell containing `x` when `capacity(x) < 1`.
    pub fn cutoff_center(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        if !self.omega0.contains(x) {
            return None;
        }
        let (idx, d) = self.nearest(x)?;
        (d < self.regime.cutoff_radius()).then(|| self.center(idx))
    }

    /// Membership in the buffer `{x in omega1 : dist(x, D_eps) >= eps tau}`.
    pub fn buffer_contains(&self, tau: f64, omega1: &Rect, x: [f64; 2]) -> bool {
        omega1.contains(x) && self.dist_to_fibers(x) >= self.regime.epsilon * tau
    }
}

/// Dirichlet data on the cylinder boundary, defined on the closed cylinder.
pub trait BoundaryData {
    fn value(&self, x: [f64; 3]) -> f64;
    /// `None` marks data that is not continuously differentiable.
    fn gradient(&self, x: [f64; 3]) -> Option<[f64; 3]>;
}

impl<B: BoundaryData + ?Sized> BoundaryData for &B {
    fn value(&self, x: [f64; 3]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: [f64; 3]) -> Option<[f64; 3]> {
        (**self).gradient(x)
    }
}

/// Polynomial `sum c x1^p x2^q x3^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<(f64, [u32; 3])>,
}

impl Polynomial {
    pub fn new(terms: Vec<(f64, [u32; 3])>) -> Self {
        Polynomial { terms }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(alloc::vec![(c, [0, 0, 0])])
    }

    /// The coordinate function `x_{axis+1}`.
    pub fn coordinate(axis: usize) -> Self {
        let mut p = [0u32; 3];
        p[axis] = 1;
        Self::new(alloc::vec![(1.0, p)])
    }

    pub fn x1_squared() -> Self {
        Self::new(alloc::vec![(1.0, [2, 0, 0])])
    }

    pub fn is_affine(&self) -> bool {
        self.terms.iter().all(|(c, p)| *c == 0.0 || p.iter().sum::<u32>() <= 1)
    }
}

fn powi(x: f64, n: u32) -> f64 {
    let mut r = 1.0;
    for _ in 0..n {
        r *= x;
    }
    r
}

impl BoundaryData for Polynomial {
    fn value(&self, x: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(c, p)| c * powi(x[0], p[0]) * powi(x[1], p[1]) * powi(x[2], p[2]))
            .sum()
    }

    fn gradient(&self, x: [f64; 3]) -> Option<[f64; 3]> {
        let mut g = [0.0; 3];
        for (c, p) in &self.terms {
            for d in 0..3 {
                if p[d] == 0 {
                    continue;
                }
                let mut t = *c * p[d] as f64;
                for e in 0..3 {
                    let k = if e == d { p[e] - 1 } else { p[e] };
                    t *= powi(x[e], k);
                }
                g[d] += t;
            }
        }
        Some(g)
    }
}

/// Boundary data given by closures.
pub struct FnBoundary<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> BoundaryData for FnBoundary<F, G>
where
    F: Fn([f64; 3]) -> f64,
    G: Fn([f64; 3]) -> Option<[f64; 3]>,
{
    fn value(&self, x: [f64; 3]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: [f64; 3]) -> Option<[f64; 3]> {
        (self.gradient)(x)
    }
}

/// Splitting `Phi_b = phi_0 + phi_1 + phi_2` on a cylinder of half-height `half_height`.
pub struct BoundaryDecomposition<'a, B: BoundaryData> {
    pub phi_b: B,
    pub lattice: &'a FiberLattice,
    pub half_height: f64,
}

/// Checks differentiability on a sample of the cylinder and returns the decomposition.
pub fn decompose_boundary<B: BoundaryData>(
    phi_b: B,
    lattice: &FiberLattice,
    half_height: f64,
) -> Result<BoundaryDecomposition<'_, B>> {
    if !(half_height > 0.0) {
        return invalid("half height must be positive");
    }
    let o = lattice.omega;
    for i in 0..=4 {
        for k in 0..=4 {
            let x = [
                o.x0 + o.width() * i as f64 / 4.0,
                o.y0 + o.height() * k as f64 / 4.0,
                -half_height + 2.0 * half_height * k as f64 / 4.0,
            ];
            match phi_b.gradient(x) {
                Some(g) if g.iter().all(|v| v.is_finite()) => {}
                _ => return invalid("boundary data must be continuously differentiable"),
            }
        }
    }
    Ok(BoundaryDecomposition { phi_b, lattice, half_height })
}

impl<B: BoundaryData> BoundaryDecomposition<'_, B> {
    /// Linear interpolation in `x3` between the top and bottom data.
    pub fn phi_l(&self, x: [f64; 3]) -> f64 {
        let l = self.half_height;
        let top = self.phi_b.value([x[0], x[1], l]);
        let bot = self.phi_b.value([x[0], x[1], -l]);
        x[2] / (2.0 * l) * (top - bot) + 0.5 * (top + bot)
    }

    /// Horizontal gradient of `phi_L`.
    pub fn phi_l_grad(&self, x: [f64; 3]) -> [f64; 3] {
        let l = self.half_height;
        let gt = self.phi_b.gradient([x[0], x[1], l]).unwrap_or([0.0; 3]);
        let gb = self.phi_b.gradient([x[0], x[1], -l]).unwrap_or([0.0; 3]);
        let top = self.phi_b.value([x[0], x[1], l]);
        let bot = self.phi_b.value([x[0], x[1], -l]);
        let s = x[2] / (2.0 * l);
        [
            s * (gt[0] - gb[0]) + 0.5 * (gt[0] + gb[0]),
            s * (gt[1] - gb[1]) + 0.5 * (gt[1] + gb[1]),
            (top - bot) / (2.0 * l),
        ]
    }

    /// `Phi_b - phi_L`; vanishes on the top and bottom faces.
    pub fn phi_0(&self, x: [f64; 3]) -> f64 {
        self.phi_b.value(x) - self.phi_l(x)
    }

    /// `phi_L c + sum (1 - c) 1_{|x'-c_mn| <= eps/2} phi_L(c_mn, x3)`.
    pub fn phi_1(&self, x: [f64; 3]) -> f64 {
        let xp = [x[0], x[1]];
        let c = self.lattice.capacity(xp);
        let mut v = self.phi_l(x) * c;
        if let Some(center) = self.lattice.cutoff_center(xp) {
            v += (1.0 - c) * self.phi_l([center[0], center[1], x[2]]);
        }
        v
    }

    /// `phi_L - phi_1`.
    pub fn phi_2(&self, x: [f64; 3]) -> f64 {
        let xp = [x[0], x[1]];
        match self.lattice.cutoff_center(xp) {
            None => 0.0,
            Some(center) => {
                let c = self.lattice.capacity(xp);
                (1.0 - c) * (self.phi_l(x) - self.phi_l([center[0], center[1], x[2]]))
            }
        }
    }

    /// Sup of `|phi_2|` sampled on polar grids around every fiber at `nz` heights.
    pub fn phi2_sup(&self, n_radial: usize, n_angle: usize, nz: usize) -> f64 {
        let reg = &self.lattice.regime;
        let (r0, r1) = (reg.fiber_radius(), reg.cutoff_radius());
        let mut sup: f64 = 0.0;
        for idx in self.lattice.indices() {
            let c = self.lattice.center(idx);
            for k in 0..nz.max(1) {
                let z = if nz <= 1 { 0.0 } else { -self.half_height + 2.0 * self.half_height * k as f64 / (nz - 1) as f64 };
                for i in 0..n_radial {
                    // log-spaced radii cover the whole annulus and the fiber
                    let t = i as f64 / (n_radial - 1).max(1) as f64;
                    let r = r0 * 0.5 * exp(t * log(2.0 * r1 / r0));
                    for a in 0..n_angle {
                        let th = TAU * a as f64 / n_angle as f64;
                        let x = [c[0] + r * crate::math::cos(th), c[1] + r * crate::math::sin(th), z];
                        sup = sup.max(self.phi_2(x).abs());
                    }
                }
            }
        }
        sup
    }
}

/// Test function `g_eps = eps^{-1} (1 - c^1)` on the reference cell `eps Y`, zero elsewhere.
pub struct TestFunctionG {
    pub regime: ScalingRegime,
}

pub fn test_function_g(regime: &ScalingRegime) -> TestFunctionG {
    TestFunctionG { regime: *regime }
}

impl TestFunctionG {
    fn radii(&self) -> (f64, f64) {
        (self.regime.fiber_radius(), self.regime.epsilon / 2.0)
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        let e = self.regime.epsilon;
        if x[0].abs() >= e / 2.0 || x[1].abs() >= e / 2.0 {
            return 0.0;
        }
        let (a, b) = self.radii();
        (1.0 - capacity_profile(norm2(x), a, b)) / e
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let e = self.regime.epsilon;
        let r = norm2(x);
        if x[0].abs() >= e / 2.0 || x[1].abs() >= e / 2.0 || r == 0.0 {
            return [0.0, 0.0];
        }
        let (a, b) = self.radii();
        let d = -capacity_profile_derivative(r, a, b) / e;
        [d * x[0] / r, d * x[1] / r]
    }

    /// Closed-form `int a |grad g|^2 = 2 pi / (eps^2 ln(1/(2 r_eps)))`.
    pub fn dirichlet_energy(&self) -> f64 {
        let (a, b) = self.radii();
        TAU / (sq(self.regime.epsilon) * (log(b) - log(a)))
    }
}

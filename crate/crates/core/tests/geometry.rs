use approx::assert_relative_eq;
use fiberhom_core::geometry::{
    capacity_profile, decompose_boundary, derive_conductivity, derive_gamma, derive_radius, test_function_g, BoundaryData,
    FiberLattice, Polynomial, Rect, ScalingRegime,
};
use fiberhom_core::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn radius_from_gamma() {
    // exp(-2 pi / 2.5) to 17 digits
    assert_relative_eq!(derive_radius(0.5, 10.0).unwrap(), 0.081_002_592_157_943_13, max_relative = 1e-14);
    assert_relative_eq!(derive_radius(1.0, 2.0 * PI).unwrap(), (-1.0f64).exp(), max_relative = 1e-15);
    assert!(matches!(derive_radius(0.05, 1.0), Err(Error::RadiusUnderflow { .. })));
}

#[test]
fn conductivity_from_radius() {
    assert_relative_eq!(derive_conductivity(PI, 1.0).unwrap(), 1.0, max_relative = 1e-15);
    assert_relative_eq!(derive_conductivity(1.0, 0.08105).unwrap(), 48.455_612_647_814_62, max_relative = 1e-13);
    assert_relative_eq!(derive_conductivity(2.0, 0.1).unwrap(), 63.661_977_236_758_13, max_relative = 1e-13);
}

#[test]
fn lattice_counts() {
    let omega = Rect::centered(1.0);
    let reg = ScalingRegime::with_radius(0.25, 1.0, 0.05, 1.0).unwrap();
    let lat = FiberLattice::build(reg, omega, Rect::centered(0.3)).unwrap();
    assert_eq!(lat.len(), 9);
    assert!(lat.contains_index((-1, -1)) && lat.contains_index((1, 1)) && !lat.contains_index((2, 0)));

    let reg = ScalingRegime::with_radius(0.5, 1.0, 0.1, 1.0).unwrap();
    let lat = FiberLattice::build(reg, omega, Rect::centered(0.1)).unwrap();
    assert_eq!(lat.indices(), vec![(0, 0)]);
    let lat = FiberLattice::build(reg, omega, Rect::centered(0.01)).unwrap();
    assert!(lat.is_empty());
}

#[test]
fn coefficient_branches() {
    let reg = ScalingRegime::canonical();
    let lat = FiberLattice::build(reg, Rect::centered(1.0), Rect::centered(0.3)).unwrap();
    assert_eq!(lat.coefficient_at([0.25, 0.0]), reg.alpha);
    assert_eq!(lat.coefficient_at([0.125, 0.125]), 1.0);
    let rho = reg.fiber_radius();
    assert_eq!(lat.coefficient_at([0.25 + rho * (1.0 - 1e-9), 0.0]), reg.alpha);
    assert_eq!(lat.coefficient_at([0.25 + rho * (1.0 + 1e-9), 0.0]), 1.0);
}

#[test]
fn capacity_values() {
    let reg = ScalingRegime::canonical();
    let lat = FiberLattice::build(reg, Rect::centered(1.0), Rect::centered(0.3)).unwrap();
    let (a, b) = (reg.fiber_radius(), reg.cutoff_radius());
    assert_eq!(lat.capacity([a, 0.0]), 0.0);
    assert_eq!(lat.capacity([0.0, b]), 1.0);
    assert_relative_eq!(lat.capacity([(a * b).sqrt(), 0.0]), 0.5, epsilon = 1e-14);
}

#[test]
fn buffer_membership() {
    let reg = ScalingRegime::canonical();
    let lat = FiberLattice::build(reg, Rect::centered(1.0), Rect::centered(0.3)).unwrap();
    let om1 = Rect::centered(0.4);
    let tau = 0.1;
    assert!(!lat.buffer_contains(tau, &om1, [0.0, 0.0]));
    let d = reg.fiber_radius() + 2.0 * reg.epsilon * tau;
    assert!(lat.buffer_contains(tau, &om1, [d, 0.0]));
    assert!(!lat.buffer_contains(tau, &om1, [0.45, 0.125]));
}

#[test]
fn affine_data_decomposes_trivially() {
    let reg = ScalingRegime::canonical();
    let lat = FiberLattice::build(reg, Rect::centered(1.0), Rect::centered(0.3)).unwrap();
    for phi in [Polynomial::coordinate(2), Polynomial::constant(2.5)] {
        let d = decompose_boundary(&phi, &lat, 1.0).unwrap();
        for x in [[0.0, 0.0, 0.3], [0.26, 0.01, -0.7], [0.5, -0.4, 1.0]] {
            assert_relative_eq!(d.phi_l(x), phi.value(x), epsilon = 1e-12);
            assert_relative_eq!(d.phi_1(x), phi.value(x), epsilon = 1e-12);
            assert!(d.phi_0(x).abs() <= 1e-12 && d.phi_2(x).abs() <= 1e-12);
        }
    }
}

#[test]
fn decomposition_matches_data_at_ends() {
    let reg = ScalingRegime::canonical();
    let lat = FiberLattice::build(reg, Rect::centered(1.0), Rect::centered(0.3)).unwrap();
    let phi = Polynomial::x1_squared();
    let d = decompose_boundary(&phi, &lat, 1.0).unwrap();
    for x in [[0.1, 0.2, 1.0], [-0.3, 0.05, -1.0]] {
        assert_relative_eq!(d.phi_l(x), phi.value(x), epsilon = 1e-12);
        assert!(d.phi_0(x).abs() <= 1e-12);
    }
    // constant across a disc
    let c = lat.center((1, 0));
    let r = 0.5 * reg.fiber_radius();
    let z = 0.37;
    let v0 = d.phi_1([c[0], c[1], z]);
    assert_relative_eq!(d.phi_1([c[0] + r, c[1], z]), v0, epsilon = 1e-12);
    assert_relative_eq!(d.phi_1([c[0], c[1] - r, z]), v0, epsilon = 1e-12);
}

#[test]
fn test_function_shape() {
    let reg = ScalingRegime::canonical();
    let g = test_function_g(&reg);
    assert_relative_eq!(g.value([0.0, 0.0]), 1.0 / reg.epsilon, max_relative = 1e-15);
    assert_eq!(g.value([reg.epsilon / 2.0, 0.0]), 0.0);
    assert_eq!(g.value([0.1, 0.1]), 0.0);
}

#[test]
fn test_function_energy_by_radial_quadrature() {
    let reg = ScalingRegime::canonical();
    let g = test_function_g(&reg);
    let (a, b) = (reg.fiber_radius(), reg.epsilon / 2.0);
    // int_a^b 2 pi r |g'(r)|^2 dr in log variable, midpoint rule
    let n = 20_000;
    let (la, lb) = (a.ln(), b.ln());
    let dt = (lb - la) / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let r = (la + (i as f64 + 0.5) * dt).exp();
        let gr = g.gradient([r, 0.0])[0];
        sum += 2.0 * PI * r * r * gr * gr * dt;
    }
    assert_relative_eq!(sum, g.dirichlet_energy(), max_relative = 1e-10);
    let ln = (1.0 / (2.0 * reg.r_eps)).ln();
    assert_relative_eq!(g.dirichlet_energy(), 2.0 * PI / (reg.epsilon * reg.epsilon * ln), max_relative = 1e-14);
}

proptest! {
    #[test]
    fn pin_modes_round_trip(eps in 0.1f64..1.0, r in 1e-4f64..0.4) {
        let g = derive_gamma(eps, r).unwrap();
        prop_assert!((derive_radius(eps, g).unwrap() / r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_relation(eps in 0.1f64..1.0, gamma in 5.0f64..200.0, kappa in 0.1f64..10.0) {
        // r_eps < 1/2 iff gamma eps^2 < 2 pi / ln 2
        prop_assume!(gamma * eps * eps < 2.0 * PI / 2f64.ln());
        let reg = ScalingRegime::with_gamma(eps, kappa, gamma, 1.0).unwrap();
        prop_assert!((reg.alpha * PI * reg.r_eps * reg.r_eps / kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profile_monotone(a in 1e-4f64..1e-2, k in 2.0f64..100.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let b = a * k;
        let (lo, hi) = (s.min(t) * 1.5 * b, s.max(t) * 1.5 * b);
        let (p, q) = (capacity_profile(lo, a, b), capacity_profile(hi, a, b));
        prop_assert!((0.0..=1.0).contains(&p) && p <= q);
    }

    #[test]
    fn fibers_inside_omega0(half in 0.05f64..0.6, eps in 0.1f64..0.5, r in 0.01f64..0.3) {
        let reg = ScalingRegime::with_radius(eps, 1.0, r, 1.0).unwrap();
        let omega0 = Rect::centered(half);
        let lat = FiberLattice::build(reg, Rect::centered(1.0), omega0).unwrap();
        let rho = reg.fiber_radius();
        for idx in lat.indices() {
            let c = lat.center(idx);
            prop_assert!(c[0] - rho >= -half - 1e-9 && c[0] + rho <= half + 1e-9);
            prop_assert!(c[1] - rho >= -half - 1e-9 && c[1] + rho <= half + 1e-9);
        }
    }
}

use approx::assert_relative_eq;
use fiberhom_core::corrector::{
    blowup_functional, corrector_energy, corrector_field, counterexample_run, test_function_integrals,
    test_function_sobolev_ratio, weighted_sobolev_ratio, PlanarSetup,
};
use fiberhom_core::geometry::{test_function_g, FiberLattice, Polynomial, Rect, ScalingRegime};
use fiberhom_core::homogenized::{solve_homogenized, Box3};
use fiberhom_core::linalg::SolverOptions;
use fiberhom_core::mesh::{CellCoefficients, Field2, Grid2, Grid3};
use fiberhom_core::solver3d::{solve_dirichlet, Medium3};
use std::f64::consts::PI;

fn setup() -> (FiberLattice, Grid3, Medium3) {
    let reg = ScalingRegime::with_radius(0.25, 1.0, 0.1, 1.0).unwrap();
    let lat = FiberLattice::build(reg, Rect::centered(0.5), Rect::centered(0.3)).unwrap();
    let plane = Grid2::new(Rect::centered(0.5), 80, 80).unwrap();
    let grid = Grid3::new(plane, 0.5, 16).unwrap();
    let medium = Medium3::new(CellCoefficients::sample(&plane, &lat, 8));
    (lat, grid, medium)
}

#[test]
fn vertical_data_has_trivial_corrector() {
    let (lat, grid, medium) = setup();
    let opts = SolverOptions::with_tol(1e-12);
    let phi = Polynomial::coordinate(2);
    let pair = solve_homogenized(&phi, lat.regime.kappa, lat.regime.gamma, &lat.omega0, &grid, None, &opts).unwrap();
    for x in [[0.0, 0.0, 0.1], [0.26, 0.01, -0.3], [0.1, 0.12, 0.0], [0.4, -0.4, 0.45]] {
        let g = corrector_field(&pair, &lat, x).unwrap();
        assert!(g[0].abs() < 1e-9 && g[1].abs() < 1e-9 && (g[2] - 1.0).abs() < 1e-9);
    }
    let w = solve_dirichlet(&grid, &medium, None, &phi, &opts).unwrap().field;
    assert!(corrector_energy(&w, &medium, &pair, &lat).unwrap() < 1e-16);
}

#[test]
fn corrector_branches() {
    let (lat, grid, _) = setup();
    let phi = Polynomial::x1_squared();
    let pair = solve_homogenized(&phi, lat.regime.kappa, lat.regime.gamma, &lat.omega0, &grid, None, &SolverOptions::default()).unwrap();
    // far from fibers c = 1
    let x = [0.41, 0.13, 0.2];
    let g = corrector_field(&pair, &lat, x).unwrap();
    let gw = pair.w.gradient(x).unwrap();
    for d in 0..3 {
        assert_relative_eq!(g[d], gw[d], epsilon = 1e-12);
    }
    // at a fiber centre c = 0 and grad c = 0
    let x = [0.25, 0.0, 0.2];
    let g = corrector_field(&pair, &lat, x).unwrap();
    assert_eq!(g[0], 0.0);
    assert_eq!(g[1], 0.0);
    assert_relative_eq!(g[2], pair.v.gradient(x).unwrap()[2], epsilon = 1e-12);
}

#[test]
fn blowup_of_vertical_field_is_the_off_fiber_measure() {
    let (lat, grid, medium) = setup();
    let w = solve_dirichlet(&grid, &medium, None, &Polynomial::coordinate(2), &SolverOptions::with_tol(1e-12)).unwrap().field;
    let region = Box3 { rect: Rect::centered(0.3), z0: -0.25, z1: 0.25 };
    let p = 4.0;
    let b = blowup_functional(&w, &lat, p, 0.5, &region).unwrap();
    let height = 0.5;
    let rho = lat.regime.fiber_radius();
    let n = lat.len() as f64;
    let upper = (0.36 - n * PI * rho * rho) * height;
    let lower = (0.36 - n * PI * (rho + grid.plane.h).powi(2)) * height;
    let m = b.lp_norm.powf(p);
    assert!(m <= upper * (1.0 + 1e-9) && m >= lower, "{lower} {m} {upper}");

    let c = solve_dirichlet(&grid, &medium, None, &Polynomial::constant(2.0), &SolverOptions::default()).unwrap().field;
    assert!(blowup_functional(&c, &lat, p, 0.5, &region).unwrap().functional < 1e-20);
    assert!(blowup_functional(&c, &lat, 2.0, 0.5, &region).is_err());
}

#[test]
fn test_function_integrals_agree_with_closed_forms() {
    let reg = ScalingRegime::with_gamma(0.25, 1.0, 10.0, 1.0).unwrap();
    let t = test_function_integrals(&reg, 2.0);
    assert_relative_eq!(t.weighted_power, t.weighted_l2, max_relative = 1e-14);
    assert_relative_eq!(t.dirichlet, test_function_g(&reg).dirichlet_energy(), max_relative = 1e-12);
    // the disc part of int a g^2 is alpha pi r^2 = kappa
    assert!(t.weighted_l2 > reg.kappa);
}

#[test]
fn test_function_energy_approaches_budget() {
    let lambda = 1.0;
    let mut prev = f64::INFINITY;
    for eps in [0.5, 0.25, 0.1, 0.05] {
        let reg = ScalingRegime::with_gamma(eps, 1.0, 10.0, 1.0).unwrap();
        let t = test_function_integrals(&reg, 2.0);
        let q = (t.dirichlet + lambda * t.weighted_l2) / (reg.gamma + lambda * reg.kappa);
        assert!(q > 1.0 && q < prev, "eps {eps}: {q}");
        prev = q;
    }
    assert!(prev < 1.1);
}

#[test]
fn sobolev_ratio_on_grid_converges_to_radial_quadrature() {
    let reg = ScalingRegime::with_gamma(0.5, 1.0, 10.0, 1.0).unwrap();
    let g = test_function_g(&reg);
    for q in [2.0, 4.0] {
        let radial = test_function_sobolev_ratio(&reg, q);
        let gaps: Vec<f64> = [4.0, 8.0, 16.0]
            .iter()
            .map(|cpr| {
                let s = PlanarSetup::new(reg, Rect::centered(0.5), Rect::centered(0.3), *cpr).unwrap();
                let v = Field2::from_fn(s.grid, |x| g.value(x));
                let coeffs = CellCoefficients::sample(&s.grid, &s.lattice, 8);
                (weighted_sobolev_ratio(&v, &coeffs, reg.epsilon, q).unwrap() / radial - 1.0).abs()
            })
            .collect();
        eprintln!("s = {q}: relative gaps {gaps:?}");
        assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1] && gaps[2] < 0.1);
    }
    let s = PlanarSetup::new(reg, Rect::centered(0.5), Rect::centered(0.3), 4.0).unwrap();
    let coeffs = CellCoefficients::sample(&s.grid, &s.lattice, 8);
    assert!(weighted_sobolev_ratio(&Field2::zeros(s.grid), &coeffs, reg.epsilon, 4.0).is_err());
}

#[test]
fn counterexample_source_norm() {
    let reg = ScalingRegime::with_gamma(0.5, 1.0, 10.0, 1.0).unwrap();
    let s = PlanarSetup::new(reg, Rect::centered(1.0), Rect::centered(0.3), 4.0).unwrap();
    let r = counterexample_run(&s, 1.0, &SolverOptions::default()).unwrap();
    assert_relative_eq!(r.lower_bound, 1.0 / 11.0, max_relative = 1e-15);
    assert!(r.source_norm <= reg.kappa.sqrt() * 1.02);
    assert!(r.measured > 0.0);
}

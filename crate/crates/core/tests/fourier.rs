use approx::assert_relative_eq;
use fiberhom_core::fourier::{mode_lambda, mode_shape, project_onto_grid, project_source, solve_stack, ModalStack};
use fiberhom_core::geometry::{FiberLattice, Polynomial, Rect, ScalingRegime};
use fiberhom_core::linalg::SolverOptions;
use fiberhom_core::mesh::{CellCoefficients, Field2, Grid2, Grid3};
use fiberhom_core::solver3d::{solve_dirichlet, Medium3};
use proptest::prelude::*;
use std::f64::consts::PI;

const L: f64 = 0.5;

fn phi(x: [f64; 2]) -> f64 {
    1.0 + x[0] - 2.0 * x[1] * x[1]
}

#[test]
fn single_mode_projects_to_itself() {
    let f = |x: [f64; 3]| phi([x[0], x[1]]) * mode_shape(1, L, x[2]);
    let x = [0.2, -0.3];
    let c = project_source(&f, x, L, 8, 64).unwrap();
    assert_relative_eq!(c[0], phi(x), max_relative = 1e-10);
    assert!(c[1..].iter().all(|v| v.abs() < 1e-10));
    let zero = project_source(&|_| 0.0, x, L, 8, 64).unwrap();
    assert!(zero.iter().all(|v| *v == 0.0));
}

#[test]
fn linear_profile_matches_sine_series() {
    // f_n = 2L int_0^1 (2t - 1) sin(n pi t) dt = -2L (1 + (-1)^n) / (n pi)
    let c = project_source(&|x: [f64; 3]| x[2], [0.0, 0.0], L, 8, 2000).unwrap();
    for (k, v) in c.iter().enumerate() {
        let n = (k + 1) as f64;
        let exact = -2.0 * L * (1.0 + (-1f64).powi(k as i32 + 1)) / (n * PI);
        assert!((v - exact).abs() < 1e-9, "mode {}: {v} vs {exact}", k + 1);
    }
}

#[test]
fn parseval_for_finite_series() {
    let grid = Grid2::new(Rect::centered(0.5), 10, 10).unwrap();
    let f = |x: [f64; 3]| mode_shape(1, L, x[2]) + 0.5 * mode_shape(3, L, x[2]);
    let s = project_onto_grid(&grid, &f, L, 6, 48, 2).unwrap();
    assert_relative_eq!(s.parseval_sum(), 1.25, max_relative = 1e-10);
    assert_relative_eq!(s.norms[0], 1.0, max_relative = 1e-10);
    assert_relative_eq!(s.norms[2], 0.5, max_relative = 1e-10);
}

fn lattice() -> FiberLattice {
    let reg = ScalingRegime::with_radius(0.25, 1.0, 0.1, 1.0).unwrap();
    FiberLattice::build(reg, Rect::centered(0.5), Rect::centered(0.3)).unwrap()
}

#[test]
fn single_mode_source_excites_one_mode() {
    let lat = lattice();
    let grid = Grid2::new(Rect::centered(0.5), 40, 40).unwrap();
    let coeffs = CellCoefficients::sample(&grid, &lat, 8);
    let f = |x: [f64; 3]| phi([x[0], x[1]]) * mode_shape(2, L, x[2]);
    let s = project_onto_grid(&grid, &f, L, 4, 32, 2).unwrap();
    let stack = solve_stack(&s, &coeffs, &SolverOptions::default()).unwrap();
    assert!(stack.u[1].max_abs() > 1e-3);
    for n in [0, 2, 3] {
        assert!(stack.u[n].max_abs() <= 1e-10 * stack.u[1].max_abs());
    }
    assert_relative_eq!(stack.lambdas[1], mode_lambda(2, L), max_relative = 1e-15);
}

#[test]
fn reconstruction_shapes() {
    let grid = Grid2::new(Rect::centered(0.5), 4, 4).unwrap();
    let stack = ModalStack {
        l: L,
        lambdas: vec![mode_lambda(1, L)],
        u: vec![Field2::from_fn(grid, |_| 1.0)],
        v: vec![Field2::zeros(grid)],
        source_norms: vec![1.0],
        reports: vec![],
    };
    for z in [-0.4, -0.1, 0.0, 0.3] {
        let r = stack.reconstruct([0.1, 0.2, z], true).unwrap();
        assert_relative_eq!(r.value, mode_shape(1, L, z), max_relative = 1e-14);
        assert_relative_eq!(r.gradient.unwrap()[2], PI / (2.0 * L) * (0.5 * PI * (z / L + 1.0)).cos(), epsilon = 1e-12);
    }
    assert!(stack.reconstruct([0.0, 0.0, -L], false).unwrap().value.abs() < 1e-15);
}

#[test]
fn series_agrees_with_direct_solve() {
    let lat = lattice();
    let plane = Grid2::new(Rect::centered(0.5), 40, 40).unwrap();
    let coeffs = CellCoefficients::sample(&plane, &lat, 8);
    let src = |x: [f64; 3]| 1.0 + x[0] + 0.5 * x[2];
    let s = project_onto_grid(&plane, &src, L, 24, 200, 4).unwrap();
    let stack = solve_stack(&s, &coeffs, &SolverOptions::default()).unwrap();
    let grid = Grid3::new(plane, L, 64).unwrap();
    let medium = Medium3::new(coeffs);
    let direct = solve_dirichlet(&grid, &medium, Some(&src), &Polynomial::constant(0.0), &SolverOptions::default()).unwrap().field;
    let scale = direct.max_abs();
    let mut gap: f64 = 0.0;
    for i in 1..8 {
        for k in 1..8 {
            let x = [-0.4 + 0.1 * i as f64, 0.13, -L + 2.0 * L * k as f64 / 8.0];
            let u = stack.reconstruct(x, false).unwrap().value;
            gap = gap.max((u - direct.interpolate(x).unwrap()).abs());
        }
    }
    assert!(gap <= 0.02 * scale, "gap {gap} scale {scale}");
}

proptest! {
    #[test]
    fn shapes_vanish_at_both_ends(n in 1usize..40) {
        prop_assert!(mode_shape(n, L, -L).abs() < 1e-12);
        prop_assert!(mode_shape(n, L, L).abs() < 1e-12);
    }

    #[test]
    fn projection_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = |x: [f64; 3]| x[2] * x[2];
        let g = |x: [f64; 3]| (3.0 * x[2]).cos();
        let h = |x: [f64; 3]| a * f(x) + b * g(x);
        let p = [0.1, 0.1];
        let (cf, cg, ch) = (
            project_source(&f, p, L, 5, 40).unwrap(),
            project_source(&g, p, L, 5, 40).unwrap(),
            project_source(&h, p, L, 5, 40).unwrap(),
        );
        for n in 0..5 {
            prop_assert!((ch[n] - a * cf[n] - b * cg[n]).abs() < 1e-12);
        }
    }
}

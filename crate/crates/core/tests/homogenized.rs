use fiberhom_core::geometry::{Polynomial, Rect};
use fiberhom_core::homogenized::{
    blowup_density, fixed_point_crosscheck, laplace_reference, max_difference, solve_homogenized, Box3,
};
use fiberhom_core::linalg::SolverOptions;
use fiberhom_core::mesh::{Field3, Grid2, Grid3};

fn grid(n: usize, nz: usize) -> Grid3 {
    Grid3::new(Grid2::new(Rect::centered(1.0), n, n).unwrap(), 1.0, nz).unwrap()
}

fn omega0() -> Rect {
    Rect::centered(0.5)
}

fn opts() -> SolverOptions {
    SolverOptions::with_tol(1e-12)
}

#[test]
fn affine_and_constant_data() {
    let g = grid(24, 12);
    for (phi, f) in [(Polynomial::coordinate(2), (|x: [f64; 3]| x[2]) as fn([f64; 3]) -> f64), (Polynomial::constant(0.7), |_| 0.7)] {
        let exact = Field3::from_fn(g, f);
        let pair = solve_homogenized(&phi, 1.0, 20.0, &omega0(), &g, None, &opts()).unwrap();
        assert!(max_difference(&pair.w, &exact) <= 1e-10);
        assert!(max_difference(&pair.v, &exact) <= 1e-10);
        let fp = fixed_point_crosscheck(&phi, 1.0, 20.0, &omega0(), &g, 1e-12, 1.0, 50).unwrap();
        assert!(fp.iterations <= 2);
        assert!(max_difference(&fp.w, &exact) <= 1e-10);
        let region = Box3 { rect: Rect::centered(0.4), z0: -0.5, z1: 0.5 };
        assert!(blowup_density(&pair, &region).unwrap() <= 1e-18);
    }
}

#[test]
fn modal_and_fixed_point_agree() {
    let g = grid(20, 10);
    let phi = Polynomial::x1_squared();
    let pair = solve_homogenized(&phi, 1.0, 20.0, &omega0(), &g, None, &opts()).unwrap();
    let fp = fixed_point_crosscheck(&phi, 1.0, 20.0, &omega0(), &g, 1e-11, 1.0, 400).unwrap();
    assert!(max_difference(&pair.w, &fp.w) <= 1e-9);
    assert!(max_difference(&pair.v, &fp.v) <= 1e-9);
    let region = Box3 { rect: Rect::centered(0.4), z0: -0.5, z1: 0.5 };
    assert!(blowup_density(&pair, &region).unwrap() > 0.0);
}

#[test]
fn decoupled_limit() {
    let g = grid(20, 10);
    let phi = Polynomial::x1_squared();
    let reference = laplace_reference(&phi, &g, &opts()).unwrap();
    let pair = solve_homogenized(&phi, 1.0, 1e-8, &omega0(), &g, None, &opts()).unwrap();
    assert!(max_difference(&pair.w, &reference) <= 1e-6 * reference.max_abs());
    let fp = fixed_point_crosscheck(&phi, 1.0, 0.0, &omega0(), &g, 1e-12, 1.0, 50).unwrap();
    assert_eq!(fp.iterations, 1);
}

#[test]
fn mirror_symmetric_data_gives_symmetric_solution() {
    let g = grid(20, 10);
    let phi = Polynomial::x1_squared();
    let pair = solve_homogenized(&phi, 1.0, 20.0, &omega0(), &g, None, &opts()).unwrap();
    let n = g.plane.nx;
    for k in 0..=g.nz {
        for j in 0..=n {
            for i in 0..=n {
                assert!((pair.w.at(i, j, k) - pair.w.at(n - i, j, k)).abs() <= 1e-10);
                assert!((pair.v.at(i, j, k) - pair.v.at(i, j, g.nz - k)).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    let g = grid(8, 4);
    let phi = Polynomial::coordinate(2);
    assert!(solve_homogenized(&phi, 0.0, 1.0, &omega0(), &g, None, &opts()).is_err());
    assert!(solve_homogenized(&phi, 1.0, 1.0, &Rect::centered(1.0), &g, None, &opts()).is_err());
    assert!(fixed_point_crosscheck(&phi, 1.0, 1.0, &omega0(), &g, 1e-8, 1.5, 10).is_err());
}

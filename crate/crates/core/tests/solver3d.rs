use approx::assert_relative_eq;
use fiberhom_core::geometry::{FiberLattice, FnBoundary, Polynomial, Rect, ScalingRegime};
use fiberhom_core::homogenized::max_difference;
use fiberhom_core::linalg::SolverOptions;
use fiberhom_core::mesh::{CellCoefficients, Field3, Grid2, Grid3};
use fiberhom_core::solver3d::{energy, rescaled_fiber_trace, solve_dirichlet, solve_perturbation, DefectCells, Medium3};
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
fn vertical_data_is_exact() {
    let (lat, grid, medium) = setup();
    let opts = SolverOptions::with_tol(1e-12);
    let w = solve_dirichlet(&grid, &medium, None, &Polynomial::coordinate(2), &opts).unwrap().field;
    let exact = Field3::from_fn(grid, |x| x[2]);
    assert!(max_difference(&w, &exact) <= 1e-10);

    // energy of x3 is the integral of a: sum of cell means times cell area times height
    let area = grid.plane.h * grid.plane.h;
    let discrete: f64 = medium.cells.mass.iter().sum::<f64>() * area * 2.0 * grid.half_height;
    assert_relative_eq!(energy(&w, &medium), discrete, max_relative = 1e-12);
    let reg = lat.regime;
    let q = lat.len() as f64 * PI * reg.fiber_radius().powi(2);
    let continuous = (1.0 - q + reg.alpha * q) * 2.0 * grid.half_height;
    assert_relative_eq!(energy(&w, &medium), continuous, max_relative = 0.02);

    let tr = rescaled_fiber_trace(&w, &medium, &lat);
    for (f, row) in tr.values.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            assert!((v - tr.z[k]).abs() < 1e-10, "fiber {:?} layer {k}", tr.fibers[f]);
        }
    }
}

#[test]
fn constants_are_reproduced() {
    let (lat, grid, medium) = setup();
    let w = solve_dirichlet(&grid, &medium, None, &Polynomial::constant(-1.5), &SolverOptions::default()).unwrap().field;
    assert!(w.values.iter().all(|v| (v + 1.5).abs() < 1e-12));
    assert!(energy(&w, &medium) < 1e-20);
    let tr = rescaled_fiber_trace(&w, &medium, &lat);
    assert!(tr.values.iter().flatten().all(|v| (v + 1.5).abs() < 1e-12));
}

#[test]
fn discrete_maximum_principle() {
    let (_, grid, medium) = setup();
    let phi = FnBoundary {
        value: |x: [f64; 3]| (3.0 * x[0]).sin() + x[1] * x[2] + x[0] * x[0],
        gradient: |x: [f64; 3]| Some([3.0 * (3.0 * x[0]).cos() + 2.0 * x[0], x[2], x[1]]),
    };
    let w = solve_dirichlet(&grid, &medium, None, &phi, &SolverOptions::default()).unwrap().field;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..=grid.nz {
        for j in 0..=grid.plane.ny {
            for i in 0..=grid.plane.nx {
                if grid.is_boundary(i, j, k) {
                    let v = w.at(i, j, k);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
    }
    assert!(w.values.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
}

#[test]
fn perturbation_matches_difference_of_solves() {
    let (_, grid, medium) = setup();
    let dims = [4, 4, 4];
    let defect = DefectCells { lo: [50, 38, 6], dims, values: vec![5.0; 64] };
    let perturbed = medium.with_defect(defect);
    let opts = SolverOptions::with_tol(1e-12);
    let phi = Polynomial::x1_squared();
    let w = solve_dirichlet(&grid, &medium, None, &phi, &opts).unwrap().field;
    let wd = solve_dirichlet(&grid, &perturbed, None, &phi, &opts).unwrap().field;
    let delta = solve_perturbation(&grid, &medium, &perturbed, &w, &opts).unwrap().field;
    let direct = wd.sub(&w);
    assert!(direct.max_abs() > 1e-4);
    assert!(max_difference(&delta, &direct) <= 1e-8 * direct.max_abs().max(1.0));

    // cells lie in the matrix, so a unit defect changes nothing
    let mut same = medium.clone();
    same.defect = Some(DefectCells { lo: [50, 38, 6], dims, values: vec![1.0; 64] });
    let unchanged = solve_dirichlet(&grid, &same, None, &phi, &opts).unwrap().field;
    assert!(max_difference(&unchanged, &w) <= 1e-9);
}

use approx::assert_relative_eq;
use fiberhom_core::defect::{
    corrector_solutions, energy_characterization, perturbation_norms, polarization_tensor, response, snap_defect,
    solve_with_defect, DefectGeometry, SnappedDefect,
};
use fiberhom_core::geometry::{FiberLattice, Polynomial, Rect, ScalingRegime};
use fiberhom_core::homogenized::{max_difference, Box3};
use fiberhom_core::linalg::SolverOptions;
use fiberhom_core::mesh::{CellCoefficients, Field3, Grid2, Grid3};
use fiberhom_core::solver3d::{solve_dirichlet, Medium3};
use fiberhom_core::Error;

struct Setup {
    lat: FiberLattice,
    grid: Grid3,
    base: Medium3,
}

fn setup() -> Setup {
    let reg = ScalingRegime::with_radius(0.25, 1.0, 0.1, 1.0).unwrap();
    let lat = FiberLattice::build(reg, Rect::centered(0.5), Rect::centered(0.125)).unwrap();
    assert_eq!(lat.len(), 1);
    let plane = Grid2::new(Rect::centered(0.5), 80, 80).unwrap();
    let grid = Grid3::new(plane, 0.5, 20).unwrap();
    let base = Medium3::new(CellCoefficients::sample(&plane, &lat, 8));
    Setup { lat, grid, base }
}

fn defect(s: &Setup, gamma1: f64) -> SnappedDefect {
    let b = Box3 { rect: Rect::new(0.3, 0.35, -0.025, 0.025).unwrap(), z0: -0.05, z1: 0.05 };
    snap_defect(&DefectGeometry { boxes: vec![b], gamma1, l: 0.25 }, &s.lat, &s.grid).unwrap()
}

fn opts() -> SolverOptions {
    SolverOptions::with_tol(1e-12)
}

#[test]
fn snapping_counts_cells() {
    let s = setup();
    let d = defect(&s, 2.0);
    assert_eq!(d.cells.count(), 4 * 4 * 2);
    assert_relative_eq!(d.volume, 0.05 * 0.05 * 0.1, max_relative = 1e-12);
}

#[test]
fn snapping_rejects_cells_near_fibers_or_outside_the_slab() {
    let s = setup();
    let near = Box3 { rect: Rect::new(0.05, 0.1, -0.025, 0.025).unwrap(), z0: -0.05, z1: 0.05 };
    let g = DefectGeometry { boxes: vec![near], gamma1: 2.0, l: 0.25 };
    assert!(matches!(snap_defect(&g, &s.lat, &s.grid), Err(Error::DefectOutsideBuffer(_))));
    let tall = Box3 { rect: Rect::new(0.3, 0.35, -0.025, 0.025).unwrap(), z0: -0.4, z1: 0.05 };
    let g = DefectGeometry { boxes: vec![tall], gamma1: 2.0, l: 0.25 };
    assert!(matches!(snap_defect(&g, &s.lat, &s.grid), Err(Error::DefectOutsideBuffer(_))));
    let g = DefectGeometry { boxes: vec![], gamma1: 2.0, l: 0.6 };
    assert!(snap_defect(&g, &s.lat, &s.grid).is_err());
}

#[test]
fn unit_contrast_is_invisible() {
    let s = setup();
    let d = defect(&s, 1.0);
    let phi = Polynomial::x1_squared();
    let w = solve_dirichlet(&s.grid, &s.base, None, &phi, &opts()).unwrap().field;
    let wd = solve_with_defect(&s.grid, &s.base, &d, &phi, &opts()).unwrap().field;
    assert!(max_difference(&w, &wd) <= 1e-10);
    let pairs = [0, 1, 2].map(|i| corrector_solutions(&s.grid, &s.base, &d, i, &opts()).unwrap());
    assert!(pairs.iter().all(|p| p.delta.max_abs() == 0.0));
    let t = polarization_tensor(&pairs, &s.base, &d).unwrap();
    assert!(t.m_star.iter().flatten().all(|v| *v == 0.0));
    let e = energy_characterization(&s.grid, &s.base, &d, [1.0, 0.0, 0.0], &|_| 1.0, &opts()).unwrap();
    assert_eq!(e.value, 0.0);
}

#[test]
fn vertical_corrector_is_exact() {
    let s = setup();
    let d = defect(&s, 3.0);
    let p = corrector_solutions(&s.grid, &s.base, &d, 2, &opts()).unwrap();
    assert!(max_difference(&p.v, &Field3::from_fn(s.grid, |x| x[2])) <= 1e-10);
    assert!(p.delta.max_abs() > 1e-6);
}

#[test]
fn polarization_tensor_bounds_and_symmetry() {
    let s = setup();
    for gamma1 in [0.5, 2.0, 10.0] {
        let d = defect(&s, gamma1);
        let pairs = [0, 1, 2].map(|i| corrector_solutions(&s.grid, &s.base, &d, i, &opts()).unwrap());
        let t = polarization_tensor(&pairs, &s.base, &d).unwrap();
        assert!(t.asymmetry() <= 1e-8);
        let (lo, hi) = t.m_star_bounds();
        let tol = 0.05 * hi;
        for ev in t.m_star_eigenvalues() {
            assert!(ev >= lo - tol && ev <= hi + tol, "gamma1 {gamma1}: {ev} not in [{lo}, {hi}]");
        }
        let (lo, hi) = t.m_bounds();
        let tol = 0.05 * (hi - lo).abs().max(hi.abs());
        for ev in t.m_eigenvalues() {
            assert!(ev >= lo - tol && ev <= hi + tol, "gamma1 {gamma1}: {ev} not in [{lo}, {hi}]");
        }
        let e = energy_characterization(&s.grid, &s.base, &d, [1.0, 0.0, 0.0], &|_| 1.0, &opts()).unwrap();
        assert!(e.value >= 0.0 && e.value <= e.upper * (1.0 + 1e-12));
    }
}

#[test]
fn response_forms_agree_and_carry_the_contrast_sign() {
    let s = setup();
    let phi = Polynomial::coordinate(0);
    let w = solve_dirichlet(&s.grid, &s.base, None, &phi, &opts()).unwrap().field;
    for gamma1 in [0.5, 4.0] {
        let d = defect(&s, gamma1);
        let wd = solve_with_defect(&s.grid, &s.base, &d, &phi, &opts()).unwrap().field;
        let r = response(&w, &wd, &s.base, &s.base.with_defect(d.cells.clone())).unwrap();
        assert!(r.relative_gap() <= 1e-8, "{r:?}");
        assert_eq!(r.volume_form.signum(), (gamma1 - 1.0f64).signum());
        let (g, l2) = perturbation_norms(&wd.sub(&w));
        assert!(g > 0.0 && l2 > 0.0 && l2 < g);
    }
}

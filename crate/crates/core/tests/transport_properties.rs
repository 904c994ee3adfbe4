use std::f64::consts::PI;

use proptest::prelude::*;
use umblt_core::functional::{boundary_flux, fourier_moment, internal_functional, modulated_boundary_functional, volume_pairing};
use umblt_core::grid::{AngularField, DirectionSet, Grid2D, ScalarField};
use umblt_core::medium::{OpticalMedium, ScatteringKernel};
use umblt_core::transport::{backward_distance, solve_adjoint, solve_forward, solve_modulated, BoundaryData, SolverSettings};

fn medium(grid: Grid2D, sigma: impl Fn(f64, f64) -> f64, kernel: ScatteringKernel) -> OpticalMedium {
    OpticalMedium::new(ScalarField::from_fn(grid, sigma), kernel, DirectionSet::new(8).unwrap()).unwrap()
}

fn exp1(n: usize) -> OpticalMedium {
    medium(Grid2D::square(n, 0.0, 0.2).unwrap(), |x, _| 0.1 + 0.1 * x, ScatteringKernel::HenyeyGreenstein { g: 0.5 })
}

fn characteristic(m: &OpticalMedium, s: f64, c: f64) -> AngularField {
    let grid = *m.grid();
    let dirs = *m.directions();
    AngularField::from_fn(grid, dirs, |x1, x2, d| {
        let (cd, sd) = dirs.theta(d);
        let tau = backward_distance(&grid, x1, x2, cd, sd);
        if s == 0.0 {
            c * tau
        } else {
            c / s * (1.0 - (-s * tau).exp())
        }
    })
}

fn sup_diff(a: &AngularField, b: &AngularField) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn settings() -> SolverSettings {
    SolverSettings::default()
}

#[test]
fn absorption_free_transport_integrates_the_source() {
    let grid = Grid2D::square(41, 0.0, 1.0).unwrap();
    let m = medium(grid, |_, _| 0.0, ScatteringKernel::None);
    let u = solve_forward(&m, &ScalarField::constant(grid, 2.0), &BoundaryData::Zero, &settings()).unwrap();
    let exact = characteristic(&m, 0.0, 2.0);
    // axis directions follow the characteristics exactly
    for d in [0, 2, 4, 6] {
        let e = u.field.direction(d).iter().zip(exact.direction(d)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(e < 1e-9, "direction {d}: {e}");
    }
    assert!(sup_diff(&u.field, &exact) < 0.35);
}

#[test]
fn absorber_error_shrinks_under_refinement() {
    let errors: Vec<f64> = [21, 41, 81]
        .iter()
        .map(|&n| {
            let grid = Grid2D::square(n, 0.0, 1.0).unwrap();
            let m = medium(grid, |_, _| 1.0, ScatteringKernel::None);
            let u = solve_forward(&m, &ScalarField::constant(grid, 1.0), &BoundaryData::Zero, &settings()).unwrap();
            sup_diff(&u.field, &characteristic(&m, 1.0, 1.0))
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn uniform_modulation_matches_scaled_absorber() {
    let grid = Grid2D::square(41, 0.0, 1.0).unwrap();
    let m = medium(grid, |_, _| 0.5, ScatteringKernel::None);
    let eps = 0.3;
    let u = solve_modulated(&m, &ScalarField::constant(grid, 1.0), eps, (0.0, 0.0), 0.0, &settings()).unwrap();
    let unmodulated = medium(grid, |_, _| 0.5 * (1.0 + eps), ScatteringKernel::None);
    let reference = solve_forward(&unmodulated, &ScalarField::constant(grid, 1.0 + eps), &BoundaryData::Zero, &settings()).unwrap();
    assert!(sup_diff(&u.field, &reference.field) < 1e-9);
    // the scaled absorber equals the unscaled one: c(1+eps) / (s(1+eps))
    assert!(sup_diff(&u.field, &characteristic(&m, 0.5 * (1.0 + eps), 1.0 + eps)) < 0.1);
}

#[test]
fn reciprocity_on_experiment_one_configuration() {
    let m = exp1(61);
    let grid = *m.grid();
    let s = ScalarField::from_fn(grid, |x, y| (-100.0 * ((x - 0.08).powi(2) + (y - 0.12).powi(2))).exp());
    let u = solve_forward(&m, &s, &BoundaryData::Zero, &settings()).unwrap().field;
    let v = solve_adjoint(&m, &BoundaryData::Constant(1.0), &settings()).unwrap().field;
    let lhs = boundary_flux(&u, &v).unwrap();
    let rhs = volume_pairing(&v, &s).unwrap();
    assert!((lhs - rhs).abs() / rhs.abs() < 0.01, "{lhs} vs {rhs}");
}

#[test]
fn modulated_functional_tracks_both_fourier_components() {
    let m = exp1(41);
    let grid = *m.grid();
    let s = ScalarField::from_fn(grid, |x, y| (-100.0 * ((x - 0.08).powi(2) + (y - 0.12).powi(2))).exp());
    let u0 = solve_forward(&m, &s, &BoundaryData::Zero, &settings()).unwrap().field;
    let v = solve_adjoint(&m, &BoundaryData::Constant(1.0), &settings()).unwrap().field;
    let h = internal_functional(&u0, &v, &s, &m).unwrap().h;
    let q = (2.0 * PI / 0.2, 0.0);
    for phase in [0.0, PI / 2.0] {
        let eps = 0.01;
        let ue = solve_modulated(&m, &s, eps, q, phase, &settings()).unwrap().field;
        let b = modulated_boundary_functional(&ue, &u0, &v).unwrap();
        let f = eps * fourier_moment(&h, q, phase);
        assert!((b - f).abs() < 0.05 * f.abs(), "phase {phase}: {b} vs {f}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn non_negative_data_give_non_negative_solutions(seed in 0u64..1000) {
        let m = exp1(15);
        let grid = *m.grid();
        let values: Vec<f64> = (0..grid.len()).map(|k| ((k as u64 * 2654435761 + seed) % 97) as f64 / 97.0).collect();
        let s = ScalarField::new(grid, values).unwrap();
        let inflow = AngularField::constant(grid, *m.directions(), 0.25);
        let u = solve_forward(&m, &s, &BoundaryData::Field(inflow), &settings()).unwrap();
        prop_assert!(u.field.min() >= 0.0);
    }

    #[test]
    fn forward_solve_is_linear_in_the_source(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let m = exp1(15);
        let grid = *m.grid();
        let s1 = ScalarField::from_fn(grid, |x, y| (x * 31.0 + seed as f64).sin() * y.cos());
        let s2 = ScalarField::from_fn(grid, |x, y| 1.0 + x * y * (seed as f64 + 1.0));
        let mut combo = s1.scale(a);
        combo.axpy(b, &s2).unwrap();
        let solve = |s: &ScalarField| solve_forward(&m, s, &BoundaryData::Zero, &settings()).unwrap().field;
        let (u1, u2, u) = (solve(&s1), solve(&s2), solve(&combo));
        let scale = u.max_abs().max(1.0);
        for k in 0..u.values().len() {
            let expected = a * u1.values()[k] + b * u2.values()[k];
            prop_assert!((u.values()[k] - expected).abs() <= 1e-8 * scale);
        }
    }
}

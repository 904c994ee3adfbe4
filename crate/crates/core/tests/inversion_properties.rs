use umblt_core::functional::ForwardModel;
use umblt_core::grid::{relative_l2_error, DirectionSet, Grid2D, ScalarField};
use umblt_core::inversion::{neumann_invert, NeumannSettings};
use umblt_core::medium::{contraction_audit, OpticalMedium, ScatteringKernel};
use umblt_core::phantoms::{render, PhantomSpec, SheppLoganVariant};
use umblt_core::transport::{solve_adjoint, BoundaryData, SolverSettings};

fn model(grid: Grid2D, sigma: (f64, f64)) -> ForwardModel {
    let m = OpticalMedium::new(
        ScalarField::from_fn(grid, |x, _| sigma.0 + sigma.1 * x),
        ScatteringKernel::HenyeyGreenstein { g: 0.5 },
        DirectionSet::new(8).unwrap(),
    )
    .unwrap();
    let settings = SolverSettings::default();
    let v0 = solve_adjoint(&m, &BoundaryData::Constant(1.0), &settings).unwrap().field;
    ForwardModel::new(m, v0, settings).unwrap()
}

#[test]
fn neumann_corrections_contract_at_the_audited_rate() {
    let fm = model(Grid2D::square(41, 0.0, 0.2).unwrap(), (0.1, 0.1));
    let audit = contraction_audit(fm.medium(), fm.v0()).unwrap();
    assert!(audit.neumann_guaranteed);
    for spec in [
        PhantomSpec::gaussian((0.08, 0.12), 100.0),
        PhantomSpec::SheppLogan {
            variant: SheppLoganVariant::Classic,
        },
    ] {
        let s = render(&spec, fm.grid()).unwrap();
        let h = fm.synthesize(&s).unwrap();
        let rec = neumann_invert(&h, &fm, &NeumannSettings::default()).unwrap();
        assert!(rec.converged);
        for w in rec.residual_history.windows(2) {
            assert!(w[1] <= audit.bound_x2 * w[0], "{:?}", rec.residual_history);
        }
        // same grid for data and inversion: only the series truncation remains
        assert!(relative_l2_error(&rec.source, &s).unwrap() < 1e-4);
    }
}

#[test]
fn neumann_converges_beyond_the_certified_regime() {
    let fm = model(Grid2D::square(31, 0.0, 1.0).unwrap(), (1.1, 0.2));
    let audit = contraction_audit(fm.medium(), fm.v0()).unwrap();
    assert!(!audit.wellposedness.x2_holds);
    assert!(audit.wellposedness.x1_holds);
    let s = render(&PhantomSpec::gaussian((0.4, 0.6), 10.0), fm.grid()).unwrap();
    let h = fm.synthesize(&s).unwrap();
    let rec = neumann_invert(&h, &fm, &NeumannSettings::default()).unwrap();
    assert!(rec.converged);
    assert!(relative_l2_error(&rec.source, &s).unwrap() < 1e-4);
}

#[test]
fn operator_norm_stays_below_the_audit_bound() {
    let fm = model(Grid2D::square(31, 0.0, 0.2).unwrap(), (0.1, 0.1));
    let bound = contraction_audit(fm.medium(), fm.v0()).unwrap().bound_x2;
    let grid = *fm.grid();
    for k in 0..6 {
        let s = ScalarField::from_fn(grid, |x, y| ((k as f64 + 1.0) * 17.0 * x + 5.0 * y * k as f64).cos());
        let s = s.scale(1.0 / s.max_abs());
        let image = fm.perturbation(&s).unwrap();
        assert!(image.max_abs() <= bound, "{} > {bound}", image.max_abs());
    }
}

//! Optical coefficients, the Henyey-Greenstein phase function, and audits of
//! the well-posedness and contraction conditions for a given medium.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{angular_integrate, AngularField, DirectionSet, Grid2D, ScalarField};

/// Henyey-Greenstein density on the circle, normalised so that its integral
/// over `[0, 2pi)` is one.
pub fn hg_kernel(g: f64, phi: f64) -> Result<f64> {
    check_anisotropy(g)?;
    Ok((1.0 - g * g) / (1.0 + g * g - 2.0 * g * phi.cos()) / (2.0 * PI))
}

fn check_anisotropy(g: f64) -> Result<()> {
    if !g.is_finite() || g.abs() > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "anisotropy must lie in [-1, 1], got {g}"
        )));
    }
    if g.abs() == 1.0 {
        return Err(Error::SingularKernel(g));
    }
    Ok(())
}

/// Rotation-invariant scattering kernel `k(theta . theta')`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScatteringKernel {
    /// No scattering.
    None,
    HenyeyGreenstein { g: f64 },
    /// Density values at angular offsets `j * 2pi / M`, `j = 0..M`.
    Tabulated(Vec<f64>),
}

impl ScatteringKernel {
    /// Dense `M x M` quadrature matrix `K_ij = k(theta_i, theta_j) * dw`.
    pub fn quadrature_matrix(&self, dirs: &DirectionSet) -> Result<Vec<f64>> {
        let m = dirs.len();
        let dw = dirs.weight();
        let offsets: Vec<f64> = match self {
            ScatteringKernel::None => vec![0.0; m],
            ScatteringKernel::HenyeyGreenstein { g } => {
                check_anisotropy(*g)?;
                (0..m)
                    .map(|j| hg_kernel(*g, dirs.angle(j)))
                    .collect::<Result<_>>()?
            }
            ScatteringKernel::Tabulated(values) => {
                if values.len() != m {
                    return Err(Error::InvalidMedium(format!(
                        "tabulated kernel has {} entries for {m} directions",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidMedium(
                        "tabulated kernel values must be finite and non-negative".into(),
                    ));
                }
                values.clone()
            }
        };
        let mut table = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                table[i * m + j] = offsets[(i + m - j) % m] * dw;
            }
        }
        Ok(table)
    }
}

/// Attenuation field plus scattering kernel on a fixed grid and direction set.
///
/// The optional `kernel_scale` multiplies the kernel pointwise in `x`; it is
/// how acoustically modulated media are represented.
#[derive(Debug, Clone)]
pub struct OpticalMedium {
    sigma: ScalarField,
    kernel: ScatteringKernel,
    dirs: DirectionSet,
    table: Vec<f64>,
    kernel_scale: Option<ScalarField>,
}

impl OpticalMedium {
    pub fn new(sigma: ScalarField, kernel: ScatteringKernel, dirs: DirectionSet) -> Result<Self> {
        if let Some(k) = sigma.values().iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidMedium(format!(
                "attenuation is negative at node {k}"
            )));
        }
        let table = kernel.quadrature_matrix(&dirs)?;
        Ok(Self {
            sigma,
            kernel,
            dirs,
            table,
            kernel_scale: None,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        self.sigma.grid()
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.dirs
    }

    pub fn sigma(&self) -> &ScalarField {
        &self.sigma
    }

    pub fn kernel(&self) -> &ScatteringKernel {
        &self.kernel
    }

    /// Row-major `M x M` quadrature matrix.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn kernel_scale(&self) -> Option<&ScalarField> {
        self.kernel_scale.as_ref()
    }

    /// Same medium with `sigma` and `k` multiplied by the non-negative field `factor`.
    pub fn modulated(&self, factor: &ScalarField) -> Result<Self> {
        if factor.values().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidMedium("modulation factor must be non-negative".into()));
        }
        let sigma = self.sigma.zip_map(factor, |s, f| s * f)?;
        let kernel_scale = match &self.kernel_scale {
            Some(s) => s.zip_map(factor, |a, b| a * b)?,
            None => factor.clone(),
        };
        Ok(Self {
            sigma,
            kernel: self.kernel.clone(),
            dirs: self.dirs,
            table: self.table.clone(),
            kernel_scale: Some(kernel_scale),
        })
    }

    /// Same coefficients resampled onto another grid. Kernel tables are
    /// position independent and carried over unchanged.
    pub fn on_grid(&self, target: &Grid2D) -> Result<Self> {
        let sigma = crate::grid::interpolate(&self.sigma, target)?;
        let kernel_scale = match &self.kernel_scale {
            Some(s) => Some(crate::grid::interpolate(s, target)?),
            None => None,
        };
        Ok(Self {
            sigma,
            kernel: self.kernel.clone(),
            dirs: self.dirs,
            table: self.table.clone(),
            kernel_scale,
        })
    }

    #[inline]
    pub(crate) fn scale_at(&self, node: usize) -> f64 {
        self.kernel_scale.as_ref().map_or(1.0, |s| s.values()[node])
    }

    pub fn has_scattering(&self) -> bool {
        self.table.iter().any(|v| *v != 0.0)
    }
}

/// `sup_(x, theta_i) sum_j k(x, theta_i, theta_j) dw` for the discrete quadrature.
pub fn scattering_bound_rho(m: &OpticalMedium) -> f64 {
    let n = m.dirs.len();
    let row_max = (0..n)
        .map(|i| m.table[i * n..(i + 1) * n].iter().sum::<f64>())
        .fold(0.0, f64::max);
    let scale_max = m.kernel_scale.as_ref().map_or(1.0, |s| s.max().max(0.0));
    row_max * scale_max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellPosednessReport {
    pub rho: f64,
    pub inf_sigma: f64,
    /// `inf sigma - rho`.
    pub alpha: f64,
    pub x1_holds: bool,
    pub diameter: f64,
    pub diam_rho: f64,
    pub x2_holds: bool,
}

impl WellPosednessReport {
    pub fn any_holds(&self) -> bool {
        self.x1_holds || self.x2_holds
    }
}

pub fn check_wellposedness(m: &OpticalMedium) -> WellPosednessReport {
    let rho = scattering_bound_rho(m);
    let inf_sigma = m.sigma.min();
    let alpha = inf_sigma - rho;
    let diameter = m.grid().diameter();
    let diam_rho = diameter * rho;
    WellPosednessReport {
        rho,
        inf_sigma,
        alpha,
        x1_holds: alpha > 0.0,
        diameter,
        diam_rho,
        x2_holds: diam_rho < 1.0,
    }
}

/// Both right-hand sides of the operator-norm estimate for
/// `M o K o S`, together with the quantities they are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionAudit {
    pub v0_sup: f64,
    pub v0_integral_inf: f64,
    pub sigma_sup: f64,
    pub wellposedness: WellPosednessReport,
    /// Bound under `inf sigma - rho >= alpha > 0`; infinite when that fails.
    pub bound_x1: f64,
    /// Bound under `diam * rho < 1`; infinite when that fails.
    pub bound_x2: f64,
    pub neumann_guaranteed: bool,
}

pub fn contraction_audit(m: &OpticalMedium, v0: &AngularField) -> Result<ContractionAudit> {
    if v0.grid() != m.grid() || v0.directions() != m.directions() {
        return Err(Error::ShapeMismatch("v0 does not live on the medium's grid".into()));
    }
    let v0_min = v0.min();
    if v0_min <= 0.0 {
        return Err(Error::PositivityViolation(format!(
            "adjoint weight has minimum {v0_min:e}"
        )));
    }
    let wp = check_wellposedness(m);
    let v0_sup = v0.max_abs();
    let v0_integral_inf = angular_integrate(v0)?.min();
    let sigma_sup = m.sigma.max_abs();
    let vol = m.dirs.weight() * m.dirs.len() as f64;
    let numerator = v0_sup * (sigma_sup + wp.rho) * vol;

    let bound_x1 = if wp.x1_holds {
        numerator / (wp.alpha * v0_integral_inf)
    } else {
        f64::INFINITY
    };
    let bound_x2 = if wp.x2_holds {
        numerator * wp.diameter / ((1.0 - wp.diam_rho) * v0_integral_inf)
    } else {
        f64::INFINITY
    };
    Ok(ContractionAudit {
        v0_sup,
        v0_integral_inf,
        sigma_sup,
        wellposedness: wp,
        bound_x1,
        bound_x2,
        neumann_guaranteed: wp.x2_holds && bound_x2 < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dirs(m: usize) -> DirectionSet {
        DirectionSet::new(m).unwrap()
    }

    #[test]
    fn hg_reference_values() {
        assert_abs_diff_eq!(hg_kernel(0.0, 1.234).unwrap(), 1.0 / (2.0 * PI), epsilon = 1e-15);
        // (1 - 0.25) / (1.25 - 1) = 3
        assert_abs_diff_eq!(hg_kernel(0.5, 0.0).unwrap(), 3.0 / (2.0 * PI), epsilon = 1e-15);
        assert_abs_diff_eq!(hg_kernel(0.5, 0.0).unwrap(), 0.477464829, epsilon = 1e-9);
        // (0.75 / 2.25) / 2pi = 1 / 6pi
        assert_abs_diff_eq!(hg_kernel(0.5, PI).unwrap(), 1.0 / (6.0 * PI), epsilon = 1e-15);
        assert_abs_diff_eq!(hg_kernel(0.5, PI).unwrap(), 0.053051648, epsilon = 1e-9);
    }

    #[test]
    fn hg_rejects_degenerate_anisotropy() {
        assert!(matches!(hg_kernel(1.0, 0.0), Err(Error::SingularKernel(_))));
        assert!(matches!(hg_kernel(-1.0, 0.3), Err(Error::SingularKernel(_))));
        assert!(matches!(hg_kernel(1.5, 0.3), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn zero_kernel_has_zero_rho() {
        let g = Grid2D::square(5, 0.0, 1.0).unwrap();
        let m = OpticalMedium::new(ScalarField::constant(g, 1.0), ScatteringKernel::None, dirs(8)).unwrap();
        assert_eq!(scattering_bound_rho(&m), 0.0);
        let wp = check_wellposedness(&m);
        assert_eq!(wp.alpha, 1.0);
        assert_eq!(wp.diam_rho, 0.0);
        assert!(wp.x1_holds && wp.x2_holds);
    }

    /// Brute force: sum the eight kernel samples directly.
    fn brute_rho(g: f64, m: usize) -> f64 {
        let dw = 2.0 * PI / m as f64;
        (0..m)
            .map(|j| {
                let phi = j as f64 * dw;
                (1.0 - g * g) / (1.0 + g * g - 2.0 * g * phi.cos()) / (2.0 * PI) * dw
            })
            .sum()
    }

    #[test]
    fn hg_rho_on_eight_directions() {
        let g = Grid2D::square(3, 0.0, 1.0).unwrap();
        let m = OpticalMedium::new(
            ScalarField::constant(g, 1.0),
            ScatteringKernel::HenyeyGreenstein { g: 0.5 },
            dirs(8),
        )
        .unwrap();
        let rho = scattering_bound_rho(&m);
        let brute = brute_rho(0.5, 8);
        assert_abs_diff_eq!(rho, brute, epsilon = 1e-14);
        // brute-force value recorded: 1 + 2 g^8 / (1 - g^8) for equally spaced samples
        assert_abs_diff_eq!(brute, 1.007843137254902, epsilon = 1e-12);
        let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| (brute_rho(0.5, n) - 1.0).abs()).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
    }

    #[test]
    fn rho_is_max_row_sum_of_tabulated_matrix() {
        let g = Grid2D::square(3, 0.0, 1.0).unwrap();
        let values = vec![0.3, 0.1, 0.0, 0.05, 0.2, 0.05];
        let m = OpticalMedium::new(
            ScalarField::constant(g, 1.0),
            ScatteringKernel::Tabulated(values.clone()),
            dirs(6),
        )
        .unwrap();
        let t = m.table();
        let row_max = (0..6).map(|i| (0..6).map(|j| t[i * 6 + j]).sum::<f64>()).fold(0.0, f64::max);
        assert_abs_diff_eq!(scattering_bound_rho(&m), row_max, epsilon = 1e-15);
        assert_abs_diff_eq!(row_max, values.iter().sum::<f64>() * PI / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn hg_table_depends_only_on_angle_difference() {
        let d = dirs(8);
        let t = ScatteringKernel::HenyeyGreenstein { g: 0.5 }.quadrature_matrix(&d).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let shifted = t[((i + 3) % 8) * 8 + (j + 3) % 8];
                assert_abs_diff_eq!(t[i * 8 + j], shifted, epsilon = 1e-16);
                assert_abs_diff_eq!(t[i * 8 + j], t[j * 8 + i], epsilon = 1e-16);
            }
        }
    }

    #[test]
    fn wellposedness_of_experiment_media() {
        let d = dirs(8);
        let hg = ScatteringKernel::HenyeyGreenstein { g: 0.5 };
        let rho_h = brute_rho(0.5, 8);

        let unit = Grid2D::square(61, 0.0, 1.0).unwrap();
        let sigma2 = ScalarField::from_fn(unit, |x1, _| 1.1 + 0.2 * x1);
        let wp = check_wellposedness(&OpticalMedium::new(sigma2, hg.clone(), d).unwrap());
        assert_abs_diff_eq!(wp.alpha, 1.1 - rho_h, epsilon = 1e-12);
        assert!(wp.x1_holds);
        assert_abs_diff_eq!(wp.diam_rho, 2f64.sqrt() * rho_h, epsilon = 1e-12);
        assert!(!wp.x2_holds);

        let small = Grid2D::square(61, 0.0, 0.2).unwrap();
        let sigma1 = ScalarField::from_fn(small, |x1, _| 0.1 + 0.1 * x1);
        let wp = check_wellposedness(&OpticalMedium::new(sigma1, hg, d).unwrap());
        assert_abs_diff_eq!(wp.diam_rho, 0.2 * 2f64.sqrt() * rho_h, epsilon = 1e-12);
        assert!((wp.diam_rho - 0.283).abs() < 0.005);
        assert!(wp.x2_holds && !wp.x1_holds);
    }

    #[test]
    fn audit_of_pure_absorber() {
        let g = Grid2D::square(11, 0.0, 0.5).unwrap();
        let d = dirs(8);
        let s = 0.7;
        let m = OpticalMedium::new(ScalarField::constant(g, s), ScatteringKernel::None, d).unwrap();
        let v0 = AngularField::from_fn(g, d, |x, y, i| 1.0 + 0.1 * x + 0.2 * y * y + 0.01 * i as f64);
        let a = contraction_audit(&m, &v0).unwrap();
        let inf_int = angular_integrate(&v0).unwrap().min();
        let expected = v0.max() * s * g.diameter() * 2.0 * PI / inf_int;
        assert_abs_diff_eq!(a.bound_x2, expected, epsilon = 1e-12);
        assert!(a.bound_x1 >= 1.0);
    }

    #[test]
    fn audit_rejects_non_positive_weight() {
        let g = Grid2D::square(4, 0.0, 1.0).unwrap();
        let d = dirs(4);
        let m = OpticalMedium::new(ScalarField::constant(g, 1.0), ScatteringKernel::None, d).unwrap();
        let mut v0 = AngularField::constant(g, d, 1.0);
        v0.values_mut()[5] = 0.0;
        assert!(matches!(contraction_audit(&m, &v0), Err(Error::PositivityViolation(_))));
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let g = Grid2D::square(4, 0.0, 1.0).unwrap();
        let sigma = ScalarField::from_fn(g, |x, _| x - 0.5);
        assert!(OpticalMedium::new(sigma, ScatteringKernel::None, dirs(4)).is_err());
    }

    /// Composite Simpson on a fine grid.
    fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let h = 2.0 * PI / n as f64;
        let mut acc = f(0.0) + f(2.0 * PI);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
        }
        acc * h / 3.0
    }

    proptest! {
        #[test]
        fn hg_is_normalised(g in -0.9f64..0.9) {
            let total = simpson(|phi| hg_kernel(g, phi).unwrap(), 20_000);
            prop_assert!((total - 1.0).abs() < 1e-10);
        }

        #[test]
        fn hg_is_even(g in -0.99f64..0.99, phi in 0.0f64..(2.0 * PI)) {
            let k = hg_kernel(g, phi).unwrap();
            prop_assert!((k - hg_kernel(g, -phi).unwrap()).abs() < 1e-12 * k.max(1.0));
            prop_assert!((k - hg_kernel(g, 2.0 * PI - phi).unwrap()).abs() < 1e-12 * k.max(1.0));
        }

        #[test]
        fn first_bound_is_never_below_one(
            s0 in 0.0f64..3.0, s1 in 0.0f64..2.0, g in -0.8f64..0.8, bump in 0.0f64..0.5
        ) {
            let grid = Grid2D::square(6, 0.0, 1.0).unwrap();
            let d = dirs(8);
            let sigma = ScalarField::from_fn(grid, |x, _| s0 + s1 * x);
            let m = OpticalMedium::new(sigma, ScatteringKernel::HenyeyGreenstein { g }, d).unwrap();
            let v0 = AngularField::from_fn(grid, d, |x, y, i| 1.0 + bump * (x * y + (i as f64).sin().abs()));
            let a = contraction_audit(&m, &v0).unwrap();
            prop_assert!(a.bound_x1 >= 1.0);
        }
    }
}

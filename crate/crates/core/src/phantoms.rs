//! Closed-form sources and attenuation fields used by the experiments.

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};

/// Intensity table of the Shepp-Logan phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SheppLoganVariant {
    /// Original intensities (2, -0.98, -0.02, ..., 0.01).
    #[default]
    Classic,
    /// Contrast-enhanced intensities (1, -0.8, -0.2, ..., 0.1).
    Modified,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSpec {
    /// `amplitude * exp(-rate * |x - center|^2)`.
    Gaussian { center: (f64, f64), rate: f64, amplitude: f64 },
    /// Ten-ellipse head phantom whose `[-1, 1]^2` frame fills the grid's domain.
    SheppLogan { variant: SheppLoganVariant },
    /// Shepp-Logan blurred by [`gaussian_smooth`] with `std` in pixels.
    SmoothedSheppLogan { variant: SheppLoganVariant, std: f64 },
    /// `c0 + c1 x1 + c2 x2`.
    Affine { c0: f64, c1: f64, c2: f64 },
    Constant(f64),
}

/// Ellipse rows: intensity, semi-axes a and b, centre, rotation in degrees.
const SHEPP_LOGAN_GEOMETRY: [[f64; 5]; 10] = [
    [0.69, 0.92, 0.0, 0.0, 0.0],
    [0.6624, 0.874, 0.0, -0.0184, 0.0],
    [0.11, 0.31, 0.22, 0.0, -18.0],
    [0.16, 0.41, -0.22, 0.0, 18.0],
    [0.21, 0.25, 0.0, 0.35, 0.0],
    [0.046, 0.046, 0.0, 0.1, 0.0],
    [0.046, 0.046, 0.0, -0.1, 0.0],
    [0.046, 0.023, -0.08, -0.605, 0.0],
    [0.023, 0.023, 0.0, -0.606, 0.0],
    [0.023, 0.046, 0.06, -0.605, 0.0],
];

const CLASSIC_INTENSITY: [f64; 10] = [2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01];
const MODIFIED_INTENSITY: [f64; 10] = [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];

impl PhantomSpec {
    /// The Gaussian `exp(-rate * |x - center|^2)` with unit peak.
    pub fn gaussian(center: (f64, f64), rate: f64) -> Self {
        PhantomSpec::Gaussian {
            center,
            rate,
            amplitude: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        match *self {
            PhantomSpec::Gaussian { center, rate, amplitude } => {
                if ![center.0, center.1, rate, amplitude].iter().all(|v| v.is_finite()) {
                    return bad("gaussian parameters must be finite");
                }
                if rate <= 0.0 {
                    return bad("gaussian rate must be positive");
                }
            }
            PhantomSpec::SmoothedSheppLogan { std, .. } => {
                if !(std > 0.0 && std.is_finite()) {
                    return bad("smoothing std must be positive");
                }
            }
            PhantomSpec::Affine { c0, c1, c2 } => {
                if ![c0, c1, c2].iter().all(|v| v.is_finite()) {
                    return bad("affine coefficients must be finite");
                }
            }
            PhantomSpec::Constant(c) => {
                if !c.is_finite() {
                    return bad("constant must be finite");
                }
            }
            PhantomSpec::SheppLogan { .. } => {}
        }
        Ok(())
    }
}

/// Samples `spec` at the nodes of `grid`.
pub fn render(spec: &PhantomSpec, grid: &Grid2D) -> Result<ScalarField> {
    spec.validate()?;
    Ok(match *spec {
        PhantomSpec::Gaussian { center, rate, amplitude } => ScalarField::from_fn(*grid, |x1, x2| {
            amplitude * (-rate * ((x1 - center.0).powi(2) + (x2 - center.1).powi(2))).exp()
        }),
        PhantomSpec::SheppLogan { variant } => shepp_logan(grid, variant),
        PhantomSpec::SmoothedSheppLogan { variant, std } => gaussian_smooth(&shepp_logan(grid, variant), std)?,
        PhantomSpec::Affine { c0, c1, c2 } => ScalarField::from_fn(*grid, |x1, x2| c0 + c1 * x1 + c2 * x2),
        PhantomSpec::Constant(c) => ScalarField::constant(*grid, c),
    })
}

fn shepp_logan(grid: &Grid2D, variant: SheppLoganVariant) -> ScalarField {
    let intensity = match variant {
        SheppLoganVariant::Classic => &CLASSIC_INTENSITY,
        SheppLoganVariant::Modified => &MODIFIED_INTENSITY,
    };
    let ellipses: Vec<_> = SHEPP_LOGAN_GEOMETRY
        .iter()
        .zip(intensity)
        .map(|(&[a, b, x0, y0, deg], &value)| {
            let (sin, cos) = deg.to_radians().sin_cos();
            (value, a * a, b * b, x0, y0, cos, sin)
        })
        .collect();
    ScalarField::from_fn(*grid, |x1, x2| {
        let x = 2.0 * (x1 - grid.x1_min) / grid.width() - 1.0;
        let y = 2.0 * (x2 - grid.x2_min) / grid.height() - 1.0;
        let total: f64 = ellipses
            .iter()
            .filter(|&&(_, a2, b2, x0, y0, cos, sin)| {
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * cos + dy * sin;
                let w = -dx * sin + dy * cos;
                u * u / a2 + w * w / b2 <= 1.0
            })
            .map(|e| e.0)
            .sum();
        total.max(0.0)
    })
}

fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (4.0 * std).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius).map(|k| (-0.5 * (k as f64 / std).powi(2)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// One-dimensional pass along a strided line, renormalising the kernel over
/// the part of its support that falls inside the grid.
fn convolve_line(src: &[f64], dst: &mut [f64], len: usize, stride: usize, offset: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as i64;
    for p in 0..len as i64 {
        let (mut acc, mut mass) = (0.0, 0.0);
        for (t, w) in kernel.iter().enumerate() {
            let q = p + t as i64 - radius;
            if q >= 0 && q < len as i64 {
                acc += w * src[offset + q as usize * stride];
                mass += w;
            }
        }
        dst[offset + p as usize * stride] = acc / mass;
    }
}

/// Convolution with a normalised Gaussian of standard deviation `std_pixels`
/// grid spacings, truncated at radius `ceil(4 std)`.
pub fn gaussian_smooth(f: &ScalarField, std_pixels: f64) -> Result<ScalarField> {
    if !(std_pixels > 0.0 && std_pixels.is_finite()) {
        return Err(Error::InvalidParameter(format!("smoothing std must be positive, got {std_pixels}")));
    }
    let grid = *f.grid();
    let kernel = gaussian_kernel(std_pixels);
    let mut tmp = vec![0.0; grid.len()];
    for j in 0..grid.ny {
        convolve_line(f.values(), &mut tmp, grid.nx, 1, grid.idx(0, j), &kernel);
    }
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.nx {
        convolve_line(&tmp, &mut out, grid.ny, grid.nx, i, &kernel);
    }
    ScalarField::new(grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::relative_l2_error;
    use approx::assert_abs_diff_eq;

    fn unit(n: usize) -> Grid2D {
        Grid2D::square(n, 0.0, 1.0).unwrap()
    }

    #[test]
    fn gaussian_sources_peak_at_their_centres() {
        let g = Grid2D::square(121, 0.0, 0.2).unwrap();
        let s1 = render(&PhantomSpec::gaussian((0.08, 0.12), 100.0), &g).unwrap();
        assert_abs_diff_eq!(s1.at(48, 72), 1.0, epsilon = 1e-12);
        assert!(s1.max() <= 1.0);

        let g = unit(101);
        let s3 = render(&PhantomSpec::gaussian((0.4, 0.6), 10.0), &g).unwrap();
        assert_abs_diff_eq!(s3.at(40, 60), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s3.at(40, 70), (-10.0f64 * 0.01).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(s3.at(40, 50), (-10.0f64 * 0.01).exp(), epsilon = 1e-12);
    }

    #[test]
    fn affine_attenuation() {
        let g = Grid2D::square(3, 0.0, 0.2).unwrap();
        let sigma = render(&PhantomSpec::Affine { c0: 0.1, c1: 0.1, c2: 0.0 }, &g).unwrap();
        assert_abs_diff_eq!(sigma.at(2, 1), 0.12, epsilon = 1e-15);
        assert_abs_diff_eq!(sigma.at(0, 2), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn shepp_logan_values_and_support() {
        let g = unit(201);
        for (variant, centre, ring) in [
            (SheppLoganVariant::Classic, 1.02, 2.0),
            (SheppLoganVariant::Modified, 0.2, 1.0),
        ] {
            let sl = render(&PhantomSpec::SheppLogan { variant }, &g).unwrap();
            assert!(sl.min() >= 0.0);
            // corner lies outside the skull
            assert_eq!(sl.at(0, 0), 0.0);
            // brain tissue just below the centre, clear of the small ellipses
            assert_abs_diff_eq!(sl.at(100, 75), centre, epsilon = 1e-12);
            // skull on the horizontal axis near x = 0.67
            assert_abs_diff_eq!(sl.at(167, 100), ring, epsilon = 1e-12);
            assert!(sl.max() <= ring + 1e-12);
        }
    }

    #[test]
    fn shepp_logan_is_deterministic() {
        let g = unit(64);
        let spec = PhantomSpec::SheppLogan {
            variant: SheppLoganVariant::Classic,
        };
        let a = render(&spec, &g).unwrap();
        let b = render(&spec, &g).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn smoothing_preserves_constants() {
        let f = ScalarField::constant(unit(31), 2.5);
        let s = gaussian_smooth(&f, 3.0).unwrap();
        for v in s.values() {
            assert_abs_diff_eq!(*v, 2.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn smoothing_a_delta_gives_the_kernel() {
        let g = unit(61);
        let mut f = ScalarField::zeros(g);
        f.values_mut()[g.idx(30, 30)] = 1.0;
        let s = gaussian_smooth(&f, 3.0).unwrap();
        let radius = 12;
        let raw: Vec<f64> = (-radius..=radius).map(|k: i32| (-(k as f64).powi(2) / 18.0).exp()).collect();
        let norm: f64 = raw.iter().sum();
        assert_abs_diff_eq!(s.at(30, 30), (1.0 / norm).powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(s.values().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(s.at(30 + 13, 30), 0.0);
    }

    #[test]
    fn smoothing_preserves_mean_of_interior_fields() {
        let g = unit(81);
        let f = ScalarField::from_fn(g, |x, y| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            if r2 < 0.04 {
                1.0 + x
            } else {
                0.0
            }
        });
        let s = gaussian_smooth(&f, 2.0).unwrap();
        let before: f64 = f.values().iter().sum();
        let after: f64 = s.values().iter().sum();
        assert_abs_diff_eq!(before, after, epsilon = 1e-10 * before);
    }

    #[test]
    fn blur_distance_grows_with_std() {
        let g = unit(121);
        let sl = render(
            &PhantomSpec::SheppLogan {
                variant: SheppLoganVariant::Classic,
            },
            &g,
        )
        .unwrap();
        let d: Vec<f64> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&std| relative_l2_error(&gaussian_smooth(&sl, std).unwrap(), &sl).unwrap())
            .collect();
        assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let g = unit(5);
        assert!(render(&PhantomSpec::gaussian((0.0, 0.0), -1.0), &g).is_err());
        assert!(gaussian_smooth(&ScalarField::zeros(g), 0.0).is_err());
        assert!(render(
            &PhantomSpec::SmoothedSheppLogan {
                variant: SheppLoganVariant::Classic,
                std: f64::NAN
            },
            &g
        )
        .is_err());
    }
}

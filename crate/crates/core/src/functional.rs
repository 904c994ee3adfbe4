//! The internal functional `H_v` and the operators it is built from.
//!
//! With `A u = -sigma u + K u`, the functional of a forward solution `u`
//! weighted by an adjoint solution `v0` is
//!
//! ```text
//! H(x) = sum_i v0(x, theta_i) [A u(x, theta_i) + S(x)] dw
//! ```
//!
//! and dividing by `sum_i v0 dw` gives `M[H] = (Id + M o K o S)[S]`, the
//! equation both inversions solve.

use crate::error::{Error, Result};
use crate::grid::{angular_integrate, AngularField, Grid2D, ScalarField};
use crate::medium::OpticalMedium;
use crate::transport::{solve_forward, BoundaryData, SolverSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct InternalFunctional {
    pub h: ScalarField,
    /// Free-form description of the adjoint boundary data behind `h`.
    pub v0_meta: String,
}

fn check_pair(u: &AngularField, m: &OpticalMedium) -> Result<()> {
    if u.grid() != m.grid() || u.directions() != m.directions() {
        return Err(Error::ShapeMismatch("field and medium disagree on grid or directions".into()));
    }
    Ok(())
}

/// `(x, theta_i) -> -sigma(x) u(x, theta_i) + sum_j K_ij u(x, theta_j)`.
pub fn apply_a(u: &AngularField, m: &OpticalMedium) -> Result<AngularField> {
    check_pair(u, m)?;
    let nd = m.directions().len();
    let n = m.grid().len();
    let table = m.table();
    let sigma = m.sigma().values();
    let uv = u.values();
    let mut out = vec![0.0; nd * n];
    for d in 0..nd {
        let row = &mut out[d * n..(d + 1) * n];
        for j in 0..nd {
            let k = table[d * nd + j];
            if k == 0.0 {
                continue;
            }
            for (o, v) in row.iter_mut().zip(&uv[j * n..(j + 1) * n]) {
                *o += k * v;
            }
        }
        for (node, o) in row.iter_mut().enumerate() {
            *o = *o * m.scale_at(node) - sigma[node] * uv[d * n + node];
        }
    }
    AngularField::new(*u.grid(), *u.directions(), out)
}

/// `H(x) = sum_i v0 (A u + S) dw`.
pub fn internal_functional(
    u: &AngularField,
    v0: &AngularField,
    source: &ScalarField,
    m: &OpticalMedium,
) -> Result<InternalFunctional> {
    u.check_same_shape(v0)?;
    source.check_same_grid(m.sigma())?;
    let au = apply_a(u, m)?;
    let n = m.grid().len();
    let s = source.values();
    let mut vals = au.values().to_vec();
    for (k, x) in vals.iter_mut().enumerate() {
        *x = (*x + s[k % n]) * v0.values()[k];
    }
    let h = angular_integrate(&AngularField::new(*u.grid(), *u.directions(), vals)?)?;
    Ok(InternalFunctional {
        h,
        v0_meta: String::new(),
    })
}

/// `H(x) = sum_i v0 (theta_i . grad u) dw` with a second-order centred
/// gradient (one-sided on the boundary). An evaluation of the same
/// functional that does not go through the transport equation.
pub fn internal_functional_gradient_form(u: &AngularField, v0: &AngularField) -> Result<ScalarField> {
    u.check_same_shape(v0)?;
    let g = *u.grid();
    let dirs = *u.directions();
    let n = g.len();
    let mut vals = vec![0.0; dirs.len() * n];
    for d in 0..dirs.len() {
        let (c, s) = dirs.theta(d);
        let ud = u.direction(d);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let node = g.idx(i, j);
                let d1 = derivative(|k| ud[g.idx(k, j)], i, g.nx, g.dx1());
                let d2 = derivative(|k| ud[g.idx(i, k)], j, g.ny, g.dx2());
                vals[d * n + node] = (c * d1 + s * d2) * v0.values()[d * n + node];
            }
        }
    }
    angular_integrate(&AngularField::new(g, dirs, vals)?)
}

/// Second-order finite difference along one axis.
fn derivative(f: impl Fn(usize) -> f64, k: usize, len: usize, h: f64) -> f64 {
    if len < 3 {
        return (f(1) - f(0)) / h;
    }
    if k == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if k == len - 1 {
        (3.0 * f(len - 1) - 4.0 * f(len - 2) + f(len - 3)) / (2.0 * h)
    } else {
        (f(k + 1) - f(k - 1)) / (2.0 * h)
    }
}

/// `x -> sum_i A u(x, theta_i) v0(x, theta_i) dw`.
pub fn op_k(u: &AngularField, v0: &AngularField, m: &OpticalMedium) -> Result<ScalarField> {
    u.check_same_shape(v0)?;
    let au = apply_a(u, m)?;
    angular_integrate(&au.zip_map(v0, |a, v| a * v)?)
}

/// `x -> f(x) / sum_i v0(x, theta_i) dw`.
pub fn op_m(f: &ScalarField, v0: &AngularField) -> Result<ScalarField> {
    let denom = positive_weight_integral(v0)?;
    f.zip_map(&denom, |a, b| a / b)
}

/// `sum_i v0 dw`, rejected unless strictly positive everywhere.
pub fn positive_weight_integral(v0: &AngularField) -> Result<ScalarField> {
    let denom = angular_integrate(v0)?;
    if let Some(k) = denom.values().iter().position(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::PositivityViolation(format!(
            "angular integral of the adjoint weight is {} at node {k}",
            denom.values()[k]
        )));
    }
    Ok(denom)
}

/// Source-to-solution map with zero inflow.
pub fn op_s(source: &ScalarField, m: &OpticalMedium, settings: &SolverSettings) -> Result<AngularField> {
    Ok(solve_forward(m, source, &BoundaryData::Zero, settings)?.field)
}

/// Medium, adjoint weight and solver settings bundled so that the operators
/// `S`, `K`, `M` and `T = Id + M o K o S` can be applied repeatedly.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    medium: OpticalMedium,
    v0: AngularField,
    v0_integral: ScalarField,
    settings: SolverSettings,
}

impl ForwardModel {
    pub fn new(medium: OpticalMedium, v0: AngularField, settings: SolverSettings) -> Result<Self> {
        check_pair(&v0, &medium)?;
        let v0_integral = positive_weight_integral(&v0)?;
        Ok(Self {
            medium,
            v0,
            v0_integral,
            settings,
        })
    }

    pub fn medium(&self) -> &OpticalMedium {
        &self.medium
    }

    pub fn v0(&self) -> &AngularField {
        &self.v0
    }

    pub fn grid(&self) -> &Grid2D {
        self.medium.grid()
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    /// `sum_i v0 dw`.
    pub fn weight_integral(&self) -> &ScalarField {
        &self.v0_integral
    }

    pub fn op_s(&self, source: &ScalarField) -> Result<AngularField> {
        op_s(source, &self.medium, &self.settings)
    }

    pub fn op_k(&self, u: &AngularField) -> Result<ScalarField> {
        op_k(u, &self.v0, &self.medium)
    }

    pub fn op_m(&self, f: &ScalarField) -> Result<ScalarField> {
        f.zip_map(&self.v0_integral, |a, b| a / b)
    }

    pub fn op_m_inverse(&self, f: &ScalarField) -> Result<ScalarField> {
        f.zip_map(&self.v0_integral, |a, b| a * b)
    }

    /// `M o K o S`.
    pub fn perturbation(&self, source: &ScalarField) -> Result<ScalarField> {
        if !self.medium.has_scattering() && self.medium.sigma().max_abs() == 0.0 {
            // A = 0: skip the transport solve
            return Ok(ScalarField::zeros(*source.grid()));
        }
        let u = self.op_s(source)?;
        self.op_m(&self.op_k(&u)?)
    }

    /// `T[S] = S + M o K o S [S]`.
    pub fn forward_map_t(&self, source: &ScalarField) -> Result<ScalarField> {
        source.add(&self.perturbation(source)?)
    }

    /// Internal functional of a source, computed from its forward solution.
    pub fn synthesize(&self, source: &ScalarField) -> Result<InternalFunctional> {
        let u = self.op_s(source)?;
        internal_functional(&u, &self.v0, source, &self.medium)
    }
}

/// `sum_i sum_{boundary} u v (n . theta_i) dw ds` with trapezoid weights along
/// each face. Corner nodes collect half a cell from each adjacent face, which
/// amounts to using the averaged normal there.
pub fn boundary_flux(u: &AngularField, v: &AngularField) -> Result<f64> {
    u.check_same_shape(v)?;
    let g = *u.grid();
    let dirs = *u.directions();
    let n = g.len();
    let dw = dirs.weight();
    let face_weight = |k: usize, len: usize, h: f64| if k == 0 || k == len - 1 { 0.5 * h } else { h };
    let mut total = 0.0;
    for d in 0..dirs.len() {
        let (c, s) = dirs.theta(d);
        let (ud, vd) = (&u.values()[d * n..(d + 1) * n], &v.values()[d * n..(d + 1) * n]);
        let mut acc = 0.0;
        for j in 0..g.ny {
            let w = face_weight(j, g.ny, g.dx2());
            let (l, r) = (g.idx(0, j), g.idx(g.nx - 1, j));
            acc += w * (-c * ud[l] * vd[l] + c * ud[r] * vd[r]);
        }
        for i in 0..g.nx {
            let w = face_weight(i, g.nx, g.dx1());
            let (b, t) = (g.idx(i, 0), g.idx(i, g.ny - 1));
            acc += w * (-s * ud[b] * vd[b] + s * ud[t] * vd[t]);
        }
        total += acc * dw;
    }
    Ok(total)
}

/// `sum_i sum_X v S dw dx`, the volume side of the reciprocity identity.
pub fn volume_pairing(v: &AngularField, source: &ScalarField) -> Result<f64> {
    let vint = angular_integrate(v)?;
    vint.inner(source)
}

/// Boundary pairing of the modulation-induced change `u_eps - u0` with `v`.
pub fn modulated_boundary_functional(u_eps: &AngularField, u0: &AngularField, v: &AngularField) -> Result<f64> {
    let delta = u_eps.zip_map(u0, |a, b| a - b)?;
    boundary_flux(&delta, v)
}

/// `sum_X cos(q . x + phase) h(x) dx`.
pub fn fourier_moment(h: &ScalarField, q: (f64, f64), phase: f64) -> f64 {
    let wave = ScalarField::from_fn(*h.grid(), |x1, x2| (q.0 * x1 + q.1 * x2 + phase).cos());
    wave.inner(h).expect("same grid")
}

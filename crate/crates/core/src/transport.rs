//! Discrete-ordinates solvers for the forward, adjoint and acoustically
//! modulated transport equations.
//!
//! Space is discretised with first-order upwind differences on the node
//! grid. For direction `theta_i = (c, s)` the node equation reads
//!
//! ```text
//! (|c|/dx1 + |s|/dx2 + sigma - K_ii) u_i = S + |c|/dx1 u_i(up1) + |s|/dx2 u_i(up2)
//!                                          + sum_{j != i} K_ij u_j
//! ```
//!
//! where `up1`/`up2` are the neighbours one step against `theta_i`. Nodes on
//! the inflow boundary take the prescribed data instead.

use std::sync::atomic::{AtomicBool, Ordering};

use log::{log, Level};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{AngularField, DirectionSet, Grid2D, ScalarField};
use crate::medium::{check_wellposedness, OpticalMedium};

/// Iteration used to solve the coupled upwind system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Every unknown is updated from the previous iterate only. `damping`
    /// in `(0, 1]` blends the new value with the old one.
    Jacobi { damping: f64 },
    /// Each direction is swept in upwind order with the in-scattering lagged
    /// by one iteration. Converges to the same discrete solution as Jacobi.
    SourceIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Threshold on the relative sup-norm change between iterates.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub scheme: Scheme,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50_000,
            scheme: Scheme::SourceIteration,
        }
    }
}

impl SolverSettings {
    pub fn jacobi() -> Self {
        Self {
            scheme: Scheme::Jacobi { damping: 1.0 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("solver tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        if let Scheme::Jacobi { damping } = self.scheme {
            if !(damping > 0.0 && damping <= 1.0) {
                return Err(Error::InvalidParameter(format!("damping {damping} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Values prescribed on the inflow part of the boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryData {
    Zero,
    Constant(f64),
    /// Only entries at boundary nodes of the relevant directions are read.
    Field(AngularField),
}

impl BoundaryData {
    #[inline]
    fn value(&self, node: usize, d: usize, n_nodes: usize) -> f64 {
        match self {
            BoundaryData::Zero => 0.0,
            BoundaryData::Constant(c) => *c,
            BoundaryData::Field(f) => f.values()[d * n_nodes + node],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub field: AngularField,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

/// Whether node `(i, j)` is an inflow node for a transport direction `(c, s)`:
/// it lies on some face whose outward normal `n` has `(c, s) . n < 0`.
/// Corner nodes are inflow if either adjacent face qualifies.
pub fn is_inflow(grid: &Grid2D, i: usize, j: usize, c: f64, s: f64) -> bool {
    (i == 0 && c > 0.0)
        || (i == grid.nx - 1 && c < 0.0)
        || (j == 0 && s > 0.0)
        || (j == grid.ny - 1 && s < 0.0)
}

/// Distance from `x` backwards along `(c, s)` to the boundary of the grid's rectangle.
pub fn backward_distance(grid: &Grid2D, x1: f64, x2: f64, c: f64, s: f64) -> f64 {
    let mut tau = f64::INFINITY;
    if c > 0.0 {
        tau = tau.min((x1 - grid.x1_min) / c);
    } else if c < 0.0 {
        tau = tau.min((grid.x1_max - x1) / -c);
    }
    if s > 0.0 {
        tau = tau.min((x2 - grid.x2_min) / s);
    } else if s < 0.0 {
        tau = tau.min((grid.x2_max - x2) / -s);
    }
    tau.max(0.0)
}

/// Per-direction stencil data for one orientation of the transport operator.
struct Stencil {
    c: f64,
    s: f64,
    a1: f64,
    a2: f64,
}

struct System<'a> {
    medium: &'a OpticalMedium,
    grid: Grid2D,
    dirs: DirectionSet,
    stencils: Vec<Stencil>,
    /// Node-equation diagonal, direction-major.
    diag: Vec<f64>,
    inflow: Vec<bool>,
}

impl<'a> System<'a> {
    /// `orientation` is `+1` for `theta . grad` and `-1` for `-theta . grad`.
    fn new(medium: &'a OpticalMedium, orientation: f64) -> Result<Self> {
        let grid = *medium.grid();
        let dirs = *medium.directions();
        let m = dirs.len();
        let n = grid.len();
        let (dx1, dx2) = (grid.dx1(), grid.dx2());
        let table = medium.table();
        let sigma = medium.sigma().values();

        let stencils: Vec<Stencil> = (0..m)
            .map(|d| {
                let (c, s) = dirs.theta(d);
                let (c, s) = (orientation * c, orientation * s);
                Stencil {
                    c,
                    s,
                    a1: c.abs() / dx1,
                    a2: s.abs() / dx2,
                }
            })
            .collect();

        let mut diag = vec![0.0; m * n];
        let mut inflow = vec![false; m * n];
        for (d, st) in stencils.iter().enumerate() {
            let self_scatter = table[d * m + d];
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let node = grid.idx(i, j);
                    let k = d * n + node;
                    inflow[k] = is_inflow(&grid, i, j, st.c, st.s);
                    diag[k] = st.a1 + st.a2 + sigma[node] - medium.scale_at(node) * self_scatter;
                    if !inflow[k] && (diag[k].is_nan() || diag[k] <= 0.0) {
                        return Err(Error::InvalidMedium(format!(
                            "non-positive diagonal {} at node {node}, direction {d}",
                            diag[k]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            medium,
            grid,
            dirs,
            stencils,
            diag,
            inflow,
        })
    }

    /// `out[d][node] = scale(node) * sum_{j != d} K_dj u[j][node]`.
    fn in_scatter(&self, u: &[f64], out: &mut [f64]) {
        let m = self.dirs.len();
        let n = self.grid.len();
        let table = self.medium.table();
        out.par_chunks_mut(n).enumerate().for_each(|(d, row)| {
            row.fill(0.0);
            for j in (0..m).filter(|&j| j != d) {
                let k = table[d * m + j];
                if k == 0.0 {
                    continue;
                }
                for (o, v) in row.iter_mut().zip(&u[j * n..(j + 1) * n]) {
                    *o += k * v;
                }
            }
            if let Some(scale) = self.medium.kernel_scale() {
                for (o, f) in row.iter_mut().zip(scale.values()) {
                    *o *= f;
                }
            }
        });
    }

    fn solve(
        &self,
        source: Option<&ScalarField>,
        boundary: &BoundaryData,
        settings: &SolverSettings,
    ) -> Result<TransportSolution> {
        settings.validate()?;
        let m = self.dirs.len();
        let n = self.grid.len();
        let nx = self.grid.nx;
        let src = source.map(|s| s.values());

        let mut u = vec![0.0; m * n];
        for d in 0..m {
            for node in 0..n {
                if self.inflow[d * n + node] {
                    u[d * n + node] = boundary.value(node, d, n);
                }
            }
        }
        let mut next = u.clone();
        let mut scatter = vec![0.0; m * n];
        let scattering = self.medium.has_scattering();

        let mut residual = f64::INFINITY;
        for iteration in 1..=settings.max_iterations {
            if scattering {
                self.in_scatter(&u, &mut scatter);
            }
            let prev = &u;
            next.par_chunks_mut(n).enumerate().for_each(|(d, out)| {
                let st = &self.stencils[d];
                let diag = &self.diag[d * n..(d + 1) * n];
                let inflow = &self.inflow[d * n..(d + 1) * n];
                let sc = &scatter[d * n..(d + 1) * n];
                let old = &prev[d * n..(d + 1) * n];
                // offsets of the upwind neighbours (against the direction)
                let step1: isize = if st.c > 0.0 { -1 } else { 1 };
                let step2: isize = if st.s > 0.0 { -(nx as isize) } else { nx as isize };
                let node_value = |node: usize, read: &[f64]| -> f64 {
                    let mut rhs = sc[node] + src.map_or(0.0, |s| s[node]);
                    if st.a1 != 0.0 {
                        rhs += st.a1 * read[(node as isize + step1) as usize];
                    }
                    if st.a2 != 0.0 {
                        rhs += st.a2 * read[(node as isize + step2) as usize];
                    }
                    rhs / diag[node]
                };
                match settings.scheme {
                    Scheme::Jacobi { damping } => {
                        for node in 0..n {
                            if inflow[node] {
                                continue;
                            }
                            let v = node_value(node, old);
                            out[node] = if damping == 1.0 { v } else { (1.0 - damping) * old[node] + damping * v };
                        }
                    }
                    Scheme::SourceIteration => {
                        let ny = n / nx;
                        let is: Vec<usize> = if st.c < 0.0 { (0..nx).rev().collect() } else { (0..nx).collect() };
                        let js: Vec<usize> = if st.s < 0.0 { (0..ny).rev().collect() } else { (0..ny).collect() };
                        for &j in &js {
                            for &i in &is {
                                let node = j * nx + i;
                                if inflow[node] {
                                    continue;
                                }
                                out[node] = node_value(node, out);
                            }
                        }
                    }
                }
            });

            let mut diff = 0.0f64;
            let mut size = 0.0f64;
            for (a, b) in next.iter().zip(&u) {
                diff = diff.max((a - b).abs());
                size = size.max(a.abs());
            }
            if !size.is_finite() || !diff.is_finite() || size > 1e150 {
                return Err(Error::Diverged { iterations: iteration });
            }
            residual = if size > 0.0 { diff / size } else { 0.0 };
            std::mem::swap(&mut u, &mut next);
            if residual <= settings.tolerance {
                return Ok(TransportSolution {
                    field: AngularField::new(self.grid, self.dirs, u)?,
                    iterations: iteration,
                    final_residual: residual,
                    converged: true,
                });
            }
        }
        Err(Error::NotConverged {
            iterations: settings.max_iterations,
            residual,
        })
    }
}

static ILL_POSED_WARNED: AtomicBool = AtomicBool::new(false);

/// Warns on the first ill-posed solve of the process; later ones log at debug level.
fn warn_if_ill_posed(m: &OpticalMedium, what: &str) {
    let wp = check_wellposedness(m);
    if !wp.any_holds() {
        let level = if ILL_POSED_WARNED.swap(true, Ordering::Relaxed) {
            Level::Debug
        } else {
            Level::Warn
        };
        log!(
            level,
            "{what}: neither well-posedness condition holds (alpha = {:.4}, diam*rho = {:.4}); proceeding",
            wp.alpha, wp.diam_rho
        );
    }
}

/// Solves `theta . grad u + sigma u - K u = S` with `u = inflow` on the inflow boundary.
pub fn solve_forward(
    m: &OpticalMedium,
    source: &ScalarField,
    inflow: &BoundaryData,
    settings: &SolverSettings,
) -> Result<TransportSolution> {
    source.check_same_grid(m.sigma())?;
    warn_if_ill_posed(m, "forward solve");
    System::new(m, 1.0)?.solve(Some(source), inflow, settings)
}

/// Solves `-theta . grad v + sigma v - K v = 0` with `v = outflow` on the outflow boundary.
pub fn solve_adjoint(m: &OpticalMedium, outflow: &BoundaryData, settings: &SolverSettings) -> Result<TransportSolution> {
    warn_if_ill_posed(m, "adjoint solve");
    System::new(m, -1.0)?.solve(None, outflow, settings)
}

/// `1 + eps * cos(q . x + phase)` sampled on `grid`.
pub fn modulation_factor(grid: &Grid2D, eps: f64, q: (f64, f64), phase: f64) -> ScalarField {
    ScalarField::from_fn(*grid, |x1, x2| 1.0 + eps * (q.0 * x1 + q.1 * x2 + phase).cos())
}

/// Forward solve with `sigma`, `k` and `S` all multiplied by
/// `1 + eps * cos(q . x + phase)` and zero inflow.
pub fn solve_modulated(
    m: &OpticalMedium,
    source: &ScalarField,
    eps: f64,
    q: (f64, f64),
    phase: f64,
    settings: &SolverSettings,
) -> Result<TransportSolution> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("modulation depth {eps} not in [0, 1]")));
    }
    let factor = modulation_factor(m.grid(), eps, q, phase);
    let modulated = m.modulated(&factor)?;
    let s_eps = source.zip_map(&factor, |s, f| s * f)?;
    solve_forward(&modulated, &s_eps, &BoundaryData::Zero, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{angular_integrate, DirectionSet};
    use crate::medium::ScatteringKernel;
    use approx::assert_abs_diff_eq;

    fn medium(grid: Grid2D, m: usize, sigma: impl Fn(f64, f64) -> f64, kernel: ScatteringKernel) -> OpticalMedium {
        OpticalMedium::new(ScalarField::from_fn(grid, sigma), kernel, DirectionSet::new(m).unwrap()).unwrap()
    }

    fn exp1(n: usize) -> OpticalMedium {
        medium(
            Grid2D::square(n, 0.0, 0.2).unwrap(),
            8,
            |x1, _| 0.1 + 0.1 * x1,
            ScatteringKernel::HenyeyGreenstein { g: 0.5 },
        )
    }

    /// Characteristic-integral oracle for a pure absorber with constant data.
    fn absorber_exact(grid: &Grid2D, dirs: &DirectionSet, s: f64, c: f64) -> AngularField {
        AngularField::from_fn(*grid, *dirs, |x1, x2, d| {
            let (cd, sd) = dirs.theta(d);
            let tau = backward_distance(grid, x1, x2, cd, sd);
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

    #[test]
    fn zero_data_gives_zero_solution() {
        let m = exp1(21);
        let sol = solve_forward(&m, &ScalarField::zeros(*m.grid()), &BoundaryData::Zero, &SolverSettings::default()).unwrap();
        assert_eq!(sol.field.max_abs(), 0.0);
        let adj = solve_adjoint(&m, &BoundaryData::Zero, &SolverSettings::default()).unwrap();
        assert_eq!(adj.field.max_abs(), 0.0);
    }

    #[test]
    fn inflow_classification() {
        let g = Grid2D::square(5, 0.0, 1.0).unwrap();
        assert!(is_inflow(&g, 0, 2, 1.0, 0.0));
        assert!(!is_inflow(&g, 4, 2, 1.0, 0.0));
        // grazing direction along the bottom face does not enter through it
        assert!(!is_inflow(&g, 2, 0, 1.0, 0.0));
        // corner: entering through either face is enough
        assert!(is_inflow(&g, 4, 0, 0.7, 0.7));
        assert!(is_inflow(&g, 0, 4, 0.7, 0.7));
        assert!(!is_inflow(&g, 4, 4, 0.7, 0.7));
    }

    #[test]
    fn absorber_matches_characteristic_formula() {
        let grid = Grid2D::square(81, 0.0, 1.0).unwrap();
        for (s, c) in [(1.0, 2.0), (0.0, 1.5)] {
            let m = medium(grid, 8, |_, _| s, ScatteringKernel::None);
            let sol = solve_forward(&m, &ScalarField::constant(grid, c), &BoundaryData::Zero, &SolverSettings::default()).unwrap();
            let exact = absorber_exact(&grid, m.directions(), s, c);
            let err = sup_diff(&sol.field, &exact);
            let h = grid.dx1();
            // oblique characteristics from the corners carry a kink that upwinding smears over O(sqrt(h))
            assert!(err < 1.2 * c * h.sqrt(), "s={s}: sup error {err}");
            // axis directions carry no kink and are first-order accurate
            for d in [0, 2, 4, 6] {
                let e = sol
                    .field
                    .direction(d)
                    .iter()
                    .zip(exact.direction(d))
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                assert!(e < 2.0 * c * h, "direction {d}: {e}");
            }
        }
    }

    #[test]
    fn jacobi_and_source_iteration_agree() {
        let m = exp1(31);
        let s = ScalarField::from_fn(*m.grid(), |x, y| (-100.0 * ((x - 0.08).powi(2) + (y - 0.12).powi(2))).exp());
        let a = solve_forward(&m, &s, &BoundaryData::Zero, &SolverSettings::jacobi()).unwrap();
        let b = solve_forward(&m, &s, &BoundaryData::Zero, &SolverSettings::default()).unwrap();
        assert!(sup_diff(&a.field, &b.field) < 1e-8 * a.field.max_abs());
        assert!(b.iterations < a.iterations);

        let damped = SolverSettings {
            scheme: Scheme::Jacobi { damping: 0.8 },
            ..SolverSettings::default()
        };
        let c = solve_forward(&m, &s, &BoundaryData::Zero, &damped).unwrap();
        assert!(sup_diff(&a.field, &c.field) < 1e-8 * a.field.max_abs());
    }

    #[test]
    fn adjoint_of_pure_advection_with_unit_data_is_one() {
        let grid = Grid2D::square(17, 0.0, 1.0).unwrap();
        let m = medium(grid, 8, |_, _| 0.0, ScatteringKernel::None);
        let v = solve_adjoint(&m, &BoundaryData::Constant(1.0), &SolverSettings::default()).unwrap();
        for x in v.field.values() {
            assert_abs_diff_eq!(*x, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn experiment_one_adjoint_weight() {
        let m = exp1(121);
        let v = solve_adjoint(&m, &BoundaryData::Constant(1.0), &SolverSettings::default()).unwrap();
        let sup = v.field.max();
        let inf_int = angular_integrate(&v.field).unwrap().min();
        assert!((sup - 1.2603).abs() / 1.2603 < 0.05, "sup {sup}");
        assert!((inf_int - 6.4870).abs() / 6.4870 < 0.05, "inf {inf_int}");
        assert!(v.field.min() > 0.0);
    }

    #[test]
    fn modulation_with_zero_depth_is_the_forward_problem() {
        let m = exp1(31);
        let s = ScalarField::from_fn(*m.grid(), |x, y| 1.0 + x - y);
        let plain = solve_forward(&m, &s, &BoundaryData::Zero, &SolverSettings::default()).unwrap();
        let modulated = solve_modulated(&m, &s, 0.0, (10.0, 3.0), 0.4, &SolverSettings::default()).unwrap();
        assert!(sup_diff(&plain.field, &modulated.field) < 1e-14);
    }

    #[test]
    fn constant_modulation_scales_coefficients() {
        let grid = Grid2D::square(41, 0.0, 1.0).unwrap();
        let (s, c, eps) = (0.8, 1.3, 0.25);
        let m = medium(grid, 8, |_, _| s, ScatteringKernel::None);
        let sol = solve_modulated(&m, &ScalarField::constant(grid, c), eps, (0.0, 0.0), 0.0, &SolverSettings::default()).unwrap();
        let direct = medium(grid, 8, |_, _| s * (1.0 + eps), ScatteringKernel::None);
        let reference = solve_forward(&direct, &ScalarField::constant(grid, c * (1.0 + eps)), &BoundaryData::Zero, &SolverSettings::default()).unwrap();
        assert!(sup_diff(&sol.field, &reference.field) < 1e-12);
        let exact = absorber_exact(&grid, m.directions(), s * (1.0 + eps), c * (1.0 + eps));
        assert!(sup_diff(&sol.field, &exact) < 0.1);
    }

    #[test]
    fn modulation_depth_is_validated() {
        let m = exp1(11);
        let s = ScalarField::zeros(*m.grid());
        assert!(solve_modulated(&m, &s, 1.5, (0.0, 0.0), 0.0, &SolverSettings::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let m = exp1(31);
        let s = ScalarField::constant(*m.grid(), 1.0);
        let settings = SolverSettings {
            max_iterations: 3,
            ..SolverSettings::jacobi()
        };
        match solve_forward(&m, &s, &BoundaryData::Zero, &settings) {
            Err(Error::NotConverged { iterations: 3, residual }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let m = exp1(11);
        let s = ScalarField::zeros(*m.grid());
        let bad = SolverSettings {
            tolerance: 0.0,
            ..SolverSettings::default()
        };
        assert!(solve_forward(&m, &s, &BoundaryData::Zero, &bad).is_err());
    }
}

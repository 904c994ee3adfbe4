//! Source reconstruction from a single internal functional.
//!
//! Both algorithms solve `T[S] = M[H]` with `T = Id + M o K o S`. The
//! Neumann series sums `(-M o K o S)^j M[H]`; the Fredholm route projects the
//! equation onto a finite basis and solves the Gram system by truncated SVD.

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functional::{ForwardModel, InternalFunctional};
use crate::grid::{Grid2D, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Neumann,
    Fredholm,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Neumann => "neumann",
            Method::Fredholm => "fredholm",
        })
    }
}

/// Sign of the correction update inside the Neumann loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeriesSign {
    /// `dS <- -M o K o S [dS]`, the series whose sum solves `T[S] = M[H]`.
    #[default]
    Alternating,
    /// `dS <- M o K o S [dS]`, kept for comparison with the printed algorithm.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannSettings {
    /// Stop once the discrete L2 norm of the next correction is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub sign: SeriesSign,
    /// Abort when a correction exceeds this multiple of `||M[H]||`.
    pub divergence_factor: f64,
}

impl Default for NeumannSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
            sign: SeriesSign::Alternating,
            divergence_factor: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub source: ScalarField,
    pub method: Method,
    /// Number of corrections added (Neumann) or effective rank (Fredholm).
    pub iterations_or_rank: usize,
    /// Neumann: norm of every correction, starting with `||M[H]||`.
    /// Fredholm: the retained singular values of the Gram matrix.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Fredholm only: `||G c - r||`.
    pub gram_residual: Option<f64>,
    /// Fredholm only: number of basis functions.
    pub basis_size: Option<usize>,
}

impl ReconstructionResult {
    pub fn final_residual(&self) -> f64 {
        match self.method {
            Method::Neumann => self.residual_history.last().copied().unwrap_or(0.0),
            Method::Fredholm => self.gram_residual.unwrap_or(0.0),
        }
    }
}

fn check_grid(h: &InternalFunctional, model: &ForwardModel) -> Result<()> {
    if h.h.grid() != model.grid() {
        return Err(Error::ShapeMismatch("internal functional and forward model live on different grids".into()));
    }
    Ok(())
}

/// Partial sums of the Neumann series for `T[S] = M[H]`.
///
/// Exceeding `max_iterations` is not an error: the partial sum is returned
/// with `converged = false` and the full correction history.
pub fn neumann_invert(h: &InternalFunctional, model: &ForwardModel, settings: &NeumannSettings) -> Result<ReconstructionResult> {
    check_grid(h, model)?;
    if !(settings.tolerance.is_finite() && settings.tolerance > 0.0) || settings.max_iterations == 0 {
        return Err(Error::InvalidParameter("neumann tolerance must be positive and max_iterations at least 1".into()));
    }
    let sign = match settings.sign {
        SeriesSign::Alternating => -1.0,
        SeriesSign::AsPrinted => 1.0,
    };
    let mut source = ScalarField::zeros(*model.grid());
    let mut delta = model.op_m(&h.h)?;
    let first = delta.l2_norm();
    let mut history = vec![first];
    let mut iterations = 0;
    let mut norm = first;
    while norm > settings.tolerance {
        if iterations == settings.max_iterations {
            warn!("neumann series stopped after {iterations} corrections with correction norm {norm:e}");
            return Ok(ReconstructionResult {
                source,
                method: Method::Neumann,
                iterations_or_rank: iterations,
                residual_history: history,
                converged: false,
                gram_residual: None,
                basis_size: None,
            });
        }
        source.axpy(1.0, &delta)?;
        iterations += 1;
        delta = model.perturbation(&delta)?.scale(sign);
        norm = delta.l2_norm();
        history.push(norm);
        if !norm.is_finite() || norm > settings.divergence_factor * first {
            return Err(Error::SeriesDiverged { iterations, norm });
        }
    }
    Ok(ReconstructionResult {
        source,
        method: Method::Neumann,
        iterations_or_rank: iterations,
        residual_history: history,
        converged: true,
        gram_residual: None,
        basis_size: None,
    })
}

/// Polynomials `x1^i x2^j` with `i + j <= degree` followed by pyramids
/// `max(1 - max(n|x1 - i/n|, n|x2 - j/n|), 0)`, `i, j = 0..=n`, both in
/// coordinates normalised to the unit square of `domain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisSet {
    pub domain: Grid2D,
    pub polynomial_degree: usize,
    pub pyramid_cells: usize,
    pub use_polynomials: bool,
    pub use_pyramids: bool,
}

impl BasisSet {
    /// 66 polynomials of total degree at most 10 and 441 pyramids on a 20-cell lattice.
    pub fn standard(domain: Grid2D) -> Self {
        Self {
            domain,
            polynomial_degree: 10,
            pyramid_cells: 20,
            use_polynomials: true,
            use_pyramids: true,
        }
    }

    pub fn polynomial_count(&self) -> usize {
        if self.use_polynomials {
            (self.polynomial_degree + 1) * (self.polynomial_degree + 2) / 2
        } else {
            0
        }
    }

    pub fn pyramid_count(&self) -> usize {
        if self.use_pyramids {
            (self.pyramid_cells + 1).pow(2)
        } else {
            0
        }
    }

    pub fn len(&self) -> usize {
        self.polynomial_count() + self.pyramid_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exponents `(i, j)` of the polynomial block in graded lexicographic order.
    pub fn polynomial_exponents(&self) -> Vec<(usize, usize)> {
        if !self.use_polynomials {
            return Vec::new();
        }
        (0..=self.polynomial_degree)
            .flat_map(|total| (0..=total).rev().map(move |i| (i, total - i)))
            .collect()
    }

    /// Vertex indices `(i, j)` of the pyramid block in row-major order.
    pub fn pyramid_vertices(&self) -> Vec<(usize, usize)> {
        if !self.use_pyramids {
            return Vec::new();
        }
        let n = self.pyramid_cells;
        (0..=n).flat_map(|i| (0..=n).map(move |j| (i, j))).collect()
    }

    /// Value of basis function `k` at a physical point.
    pub fn value(&self, k: usize, x1: f64, x2: f64) -> f64 {
        let d = &self.domain;
        let y1 = (x1 - d.x1_min) / d.width();
        let y2 = (x2 - d.x2_min) / d.height();
        let np = self.polynomial_count();
        if k < np {
            let (i, j) = self.polynomial_exponents()[k];
            y1.powi(i as i32) * y2.powi(j as i32)
        } else {
            let n = self.pyramid_cells;
            let k = k - np;
            let (i, j) = (k / (n + 1), k % (n + 1));
            pyramid(n as f64, y1 - i as f64 / n as f64, y2 - j as f64 / n as f64)
        }
    }
}

fn pyramid(n: f64, d1: f64, d2: f64) -> f64 {
    (1.0 - (n * d1.abs()).max(n * d2.abs())).max(0.0)
}

/// Samples every basis function on `grid`, polynomials first.
pub fn evaluate_basis(basis: &BasisSet, grid: &Grid2D) -> Result<Vec<ScalarField>> {
    let d = &basis.domain;
    for (x1, x2) in [(grid.x1_min, grid.x2_min), (grid.x1_max, grid.x2_max)] {
        if !d.contains(x1, x2) {
            return Err(Error::DomainMismatch { x1, x2 });
        }
    }
    if basis.pyramid_cells == 0 && basis.use_pyramids {
        return Err(Error::InvalidParameter("pyramid lattice needs at least one cell".into()));
    }
    let normalise = |x1: f64, x2: f64| ((x1 - d.x1_min) / d.width(), (x2 - d.x2_min) / d.height());
    let mut fields = Vec::with_capacity(basis.len());
    for (i, j) in basis.polynomial_exponents() {
        fields.push(ScalarField::from_fn(*grid, |x1, x2| {
            let (y1, y2) = normalise(x1, x2);
            y1.powi(i as i32) * y2.powi(j as i32)
        }));
    }
    let n = basis.pyramid_cells as f64;
    for (i, j) in basis.pyramid_vertices() {
        fields.push(ScalarField::from_fn(*grid, |x1, x2| {
            let (y1, y2) = normalise(x1, x2);
            pyramid(n, y1 - i as f64 / n, y2 - j as f64 / n)
        }));
    }
    Ok(fields)
}

/// Images `t_i = T[b_i]` of the basis functions under the forward map.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisColumns {
    pub grid: Grid2D,
    pub columns: Vec<ScalarField>,
}

const COLUMN_MAGIC: &[u8; 8] = b"UMBLTCOL";

impl BasisColumns {
    /// One forward solve per basis function, run in parallel.
    pub fn compute(model: &ForwardModel, basis: &[ScalarField]) -> Result<Self> {
        let columns = basis.par_iter().map(|b| model.forward_map_t(b)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *model.grid(),
            columns,
        })
    }

    /// Little-endian binary dump: magic, grid, column count, then the values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        w.write_all(COLUMN_MAGIC)?;
        for n in [g.nx as u64, g.ny as u64, self.columns.len() as u64] {
            w.write_all(&n.to_le_bytes())?;
        }
        for x in [g.x1_min, g.x1_max, g.x2_min, g.x2_max] {
            w.write_all(&x.to_le_bytes())?;
        }
        for c in &self.columns {
            for v in c.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != COLUMN_MAGIC {
            return Err(Error::Parse {
                line: 0,
                message: "not a basis column file".into(),
            });
        }
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let nx = u64::from_le_bytes(next(&mut r)?) as usize;
        let ny = u64::from_le_bytes(next(&mut r)?) as usize;
        let count = u64::from_le_bytes(next(&mut r)?) as usize;
        let mut bounds = [0.0; 4];
        for b in &mut bounds {
            *b = f64::from_le_bytes(next(&mut r)?);
        }
        let grid = Grid2D::new(nx, ny, (bounds[0], bounds[1]), (bounds[2], bounds[3]))?;
        let mut columns = Vec::with_capacity(count);
        for _ in 0..count {
            let mut values = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                values.push(f64::from_le_bytes(next(&mut r)?));
            }
            columns.push(ScalarField::new(grid, values)?);
        }
        Ok(Self { grid, columns })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FredholmSettings {
    /// Singular values below `relative_threshold * sigma_max` are discarded.
    pub relative_threshold: f64,
}

impl Default for FredholmSettings {
    fn default() -> Self {
        Self { relative_threshold: 1e-10 }
    }
}

/// Galerkin least-squares solution of `T[S] = M[H]` in the span of `basis`.
///
/// `columns` must hold `T[b_i]` for the same basis in the same order.
pub fn fredholm_invert(
    h: &InternalFunctional,
    model: &ForwardModel,
    basis: &[ScalarField],
    columns: &BasisColumns,
    settings: &FredholmSettings,
) -> Result<ReconstructionResult> {
    check_grid(h, model)?;
    if columns.columns.len() != basis.len() || columns.grid != *model.grid() {
        return Err(Error::ShapeMismatch("basis columns do not match the basis or the model grid".into()));
    }
    if basis.is_empty() {
        return Err(Error::InvalidParameter("empty basis".into()));
    }
    if !(settings.relative_threshold.is_finite() && settings.relative_threshold >= 0.0) {
        return Err(Error::InvalidParameter("truncation threshold must be non-negative".into()));
    }
    let grid = *model.grid();
    let target = model.op_m(&h.h)?;
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let nb = basis.len();
    let weighted = DMatrix::from_fn(grid.len(), nb, |k, i| columns.columns[i].values()[k] * sqrt_w[k]);
    let rhs_vec = DVector::from_fn(grid.len(), |k, _| target.values()[k] * sqrt_w[k]);
    let gram = weighted.tr_mul(&weighted);
    let r = weighted.tr_mul(&rhs_vec);

    let svd = gram.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = settings.relative_threshold * sigma_max;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let ut_r = u.tr_mul(&r);
    let mut scaled = DVector::zeros(nb);
    let mut kept = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            scaled[k] = ut_r[k] / s;
            kept.push(s);
        }
    }
    let coeffs = v_t.tr_mul(&scaled);
    let gram_residual = (&gram * &coeffs - &r).norm();
    let rank = kept.len();
    if rank < nb {
        warn!("gram matrix truncated to effective rank {rank} of {nb}");
    }

    let mut values = vec![0.0; grid.len()];
    for (c, b) in coeffs.iter().zip(basis) {
        for (acc, v) in values.iter_mut().zip(b.values()) {
            *acc += c * v;
        }
    }
    Ok(ReconstructionResult {
        source: ScalarField::new(grid, values)?,
        method: Method::Fredholm,
        iterations_or_rank: rank,
        residual_history: kept,
        converged: true,
        gram_residual: Some(gram_residual),
        basis_size: Some(nb),
    })
}

/// Expansion coefficients recovered by [`fredholm_invert`], recomputed for
/// inspection: least-squares fit of `source` in the span of `basis`.
pub fn basis_coefficients(source: &ScalarField, basis: &[ScalarField], relative_threshold: f64) -> Result<Vec<f64>> {
    let grid = *source.grid();
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(grid.len(), basis.len(), |k, i| basis[i].values()[k] * sqrt_w[k]);
    let b = DVector::from_fn(grid.len(), |k, _| source.values()[k] * sqrt_w[k]);
    let gram = a.tr_mul(&a);
    let r = a.tr_mul(&b);
    let svd = gram.svd(true, true);
    let eps = relative_threshold * svd.singular_values.max();
    let x = svd.solve(&r, eps).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

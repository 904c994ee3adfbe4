//! Uniform node-centered grids, discrete direction sets and the field
//! containers that live on them.
//!
//! Nodes include the boundary. A node `(i, j)` sits at
//! `(x1_min + i*dx1, x2_min + j*dx2)` and is stored at flat index `j*nx + i`,
//! so a grid row (fixed `x2`) is contiguous.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Slack used when checking that a target node lies inside a source domain.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, x1: (f64, f64), x2: (f64, f64)) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes per axis, got {nx}x{ny}"
            )));
        }
        let finite = [x1.0, x1.1, x2.0, x2.1].iter().all(|v| v.is_finite());
        if !finite || x1.0 >= x1.1 || x2.0 >= x2.1 {
            return Err(Error::InvalidGrid(format!(
                "bounds must be finite and strictly ordered, got {x1:?} x {x2:?}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            x1_min: x1.0,
            x1_max: x1.1,
            x2_min: x2.0,
            x2_max: x2.1,
        })
    }

    /// Square domain `[lo, hi]^2` with `n` nodes per side.
    pub fn square(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(n, n, (lo, hi), (lo, hi))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx1(&self) -> f64 {
        (self.x1_max - self.x1_min) / (self.nx - 1) as f64
    }

    pub fn dx2(&self) -> f64 {
        (self.x2_max - self.x2_min) / (self.ny - 1) as f64
    }

    pub fn width(&self) -> f64 {
        self.x1_max - self.x1_min
    }

    pub fn height(&self) -> f64 {
        self.x2_max - self.x2_min
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn x1(&self, i: usize) -> f64 {
        if i == self.nx - 1 {
            self.x1_max
        } else {
            self.x1_min + i as f64 * self.dx1()
        }
    }

    #[inline]
    pub fn x2(&self, j: usize) -> f64 {
        if j == self.ny - 1 {
            self.x2_max
        } else {
            self.x2_min + j as f64 * self.dx2()
        }
    }

    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x1(i), self.x2(j))
    }

    /// Trapezoidal cell weight of node `(i, j)`: `dx1*dx2` in the interior,
    /// halved on edges and quartered at corners.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let w1 = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let w2 = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        w1 * w2 * self.dx1() * self.dx2()
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                w.push(self.weight(i, j));
            }
        }
        w
    }

    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        let s1 = DOMAIN_SLACK * self.width().max(1.0);
        let s2 = DOMAIN_SLACK * self.height().max(1.0);
        x1 >= self.x1_min - s1 && x1 <= self.x1_max + s1 && x2 >= self.x2_min - s2 && x2 <= self.x2_max + s2
    }

    pub fn same_domain(&self, other: &Grid2D) -> bool {
        self.x1_min == other.x1_min
            && self.x1_max == other.x1_max
            && self.x2_min == other.x2_min
            && self.x2_max == other.x2_max
    }

    /// Grid with the same bounds and a different resolution.
    pub fn resampled(&self, nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, (self.x1_min, self.x1_max), (self.x2_min, self.x2_max))
    }
}

/// Equally spaced directions on the unit circle, `omega_i = i * 2pi / M`
/// (zero-based), each carrying the weight `2pi / M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectionSet {
    m: usize,
}

impl DirectionSet {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("direction count must be positive".into()));
        }
        Ok(Self { m })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn weight(&self) -> f64 {
        2.0 * PI / self.m as f64
    }

    pub fn angle(&self, i: usize) -> f64 {
        i as f64 * self.weight()
    }

    /// Unit vector of direction `i`. Components that vanish analytically
    /// (multiples of pi/2) are returned as exact zeros.
    pub fn theta(&self, i: usize) -> (f64, f64) {
        // exact quarter turns avoid 6e-17 "zeros" that would flip upwinding
        if (4 * i).is_multiple_of(self.m) {
            return match (4 * i / self.m) % 4 {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                2 => (-1.0, 0.0),
                _ => (0.0, -1.0),
            };
        }
        let w = self.angle(i);
        (w.cos(), w.sin())
    }
}

/// Nodal values of a function of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x1, x2)` at every node.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x1, x2) = grid.point(i, j);
                values.push(f(x1, x2));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ScalarField) -> Result<()> {
        self.check_same_grid(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Trapezoid-weighted discrete L2 inner product.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_grid(other)?;
        let g = &self.grid;
        let mut acc = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                acc += g.weight(i, j) * self.values[k] * other.values[k];
            }
        }
        Ok(acc)
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).expect("same grid").sqrt()
    }

    /// Trapezoidal integral over the domain.
    pub fn integral(&self) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                acc += g.weight(i, j) * self.values[g.idx(i, j)];
            }
        }
        acc
    }

    pub(crate) fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch(format!(
                "grids differ: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Writes the field as CSV: a `# nx ny x1_min x1_max x2_min x2_max`
    /// header followed by one grid row (fixed `x2`) per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        writeln!(
            w,
            "# {} {} {} {} {} {}",
            g.nx, g.ny, g.x1_min, g.x1_max, g.x2_min, g.x2_max
        )?;
        let mut line = String::new();
        for j in 0..g.ny {
            line.clear();
            for i in 0..g.nx {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format_sci(self.values[g.idx(i, j)]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty input".into(),
        })?;
        let header = header?;
        let parts: Vec<&str> = header
            .trim()
            .strip_prefix('#')
            .ok_or(Error::Parse {
                line: 1,
                message: "missing '#' header".into(),
            })?
            .split_whitespace()
            .collect();
        if parts.len() != 6 {
            return Err(Error::Parse {
                line: 1,
                message: format!("header needs 6 entries, found {}", parts.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: 1,
            message: format!("bad header entry {what}"),
        };
        let nx: usize = parts[0].parse().map_err(|_| bad(parts[0]))?;
        let ny: usize = parts[1].parse().map_err(|_| bad(parts[1]))?;
        let b: Vec<f64> = parts[2..]
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| bad(p)))
            .collect::<Result<_>>()?;
        let grid = Grid2D::new(nx, ny, (b[0], b[1]), (b[2], b[3]))?;

        let mut values = Vec::with_capacity(grid.len());
        for (n, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let before = values.len();
            for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
                values.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("bad value {tok:?}"),
                })?);
            }
            if values.len() - before != nx {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected {nx} values, found {}", values.len() - before),
                });
            }
        }
        Self::new(grid, values)
    }
}

/// C-style `%.12e`.
pub fn format_sci(v: f64) -> String {
    let s = format!("{v:.12e}");
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', exp),
            };
            let mut out = String::with_capacity(mantissa.len() + 5);
            out.push_str(mantissa);
            out.push('e');
            out.push(sign);
            if digits.len() < 2 {
                out.push('0');
            }
            out.push_str(digits);
            out
        }
        None => s,
    }
}

/// Nodal values of a function of `(x, theta_i)`, stored direction-major:
/// all nodes of direction 0, then all nodes of direction 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularField {
    grid: Grid2D,
    dirs: DirectionSet,
    values: Vec<f64>,
}

impl AngularField {
    pub fn new(grid: Grid2D, dirs: DirectionSet, values: Vec<f64>) -> Result<Self> {
        let n = grid.len() * dirs.len();
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} angular values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, dirs, values })
    }

    pub fn zeros(grid: Grid2D, dirs: DirectionSet) -> Self {
        Self::constant(grid, dirs, 0.0)
    }

    pub fn constant(grid: Grid2D, dirs: DirectionSet, c: f64) -> Self {
        Self {
            grid,
            dirs,
            values: vec![c; grid.len() * dirs.len()],
        }
    }

    /// Samples `f(x1, x2, d)` for every node and direction index `d`.
    pub fn from_fn(grid: Grid2D, dirs: DirectionSet, f: impl Fn(f64, f64, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len() * dirs.len());
        for d in 0..dirs.len() {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let (x1, x2) = grid.point(i, j);
                    values.push(f(x1, x2, d));
                }
            }
        }
        Self { grid, dirs, values }
    }

    /// The same scalar field repeated for every direction.
    pub fn isotropic(field: &ScalarField, dirs: DirectionSet) -> Self {
        let mut values = Vec::with_capacity(field.values.len() * dirs.len());
        for _ in 0..dirs.len() {
            values.extend_from_slice(&field.values);
        }
        Self {
            grid: field.grid,
            dirs,
            values,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.dirs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, d: usize) -> f64 {
        self.values[d * self.grid.len() + self.grid.idx(i, j)]
    }

    /// Values of one direction as a slice over nodes.
    pub fn direction(&self, d: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[d * n..(d + 1) * n]
    }

    pub fn direction_field(&self, d: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.direction(d).to_vec(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_shape(&self, other: &AngularField) -> bool {
        self.grid == other.grid && self.dirs == other.dirs
    }

    pub(crate) fn check_same_shape(&self, other: &AngularField) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("angular fields differ in grid or directions".into()));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &AngularField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            grid: self.grid,
            dirs: self.dirs,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            grid: self.grid,
            dirs: self.dirs,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }
}

/// `x -> sum_i f(x, theta_i) * dw`. On the periodic circle the trapezoidal
/// rule reduces to this equal-weight sum.
pub fn angular_integrate(f: &AngularField) -> Result<ScalarField> {
    if let Some(index) = f.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let n = f.grid.len();
    let w = f.dirs.weight();
    let mut out = vec![0.0; n];
    for d in 0..f.dirs.len() {
        for (o, v) in out.iter_mut().zip(f.direction(d)) {
            *o += v * w;
        }
    }
    Ok(ScalarField {
        grid: f.grid,
        values: out,
    })
}

/// Bilinear interpolation of `f` onto the nodes of `target`.
pub fn interpolate(f: &ScalarField, target: &Grid2D) -> Result<ScalarField> {
    let src = &f.grid;
    if src == target {
        return Ok(f.clone());
    }
    let (dx1, dx2) = (src.dx1(), src.dx2());
    let mut values = Vec::with_capacity(target.len());
    for j in 0..target.ny {
        for i in 0..target.nx {
            let (x1, x2) = target.point(i, j);
            if !src.contains(x1, x2) {
                return Err(Error::DomainMismatch { x1, x2 });
            }
            let (i0, t1) = locate((x1 - src.x1_min) / dx1, src.nx);
            let (j0, t2) = locate((x2 - src.x2_min) / dx2, src.ny);
            let v00 = f.at(i0, j0);
            let v10 = f.at(i0 + 1, j0);
            let v01 = f.at(i0, j0 + 1);
            let v11 = f.at(i0 + 1, j0 + 1);
            values.push(
                (1.0 - t1) * (1.0 - t2) * v00 + t1 * (1.0 - t2) * v10 + (1.0 - t1) * t2 * v01 + t1 * t2 * v11,
            );
        }
    }
    Ok(ScalarField {
        grid: *target,
        values,
    })
}

/// Cell index and local coordinate in `[0, 1]` for a fractional node position.
fn locate(s: f64, n: usize) -> (usize, f64) {
    let s = s.clamp(0.0, (n - 1) as f64);
    let i0 = (s.floor() as usize).min(n - 2);
    let t = s - i0 as f64;
    // snap node hits so sub-grid transfers are exact copies
    if t.abs() < 1e-9 {
        (i0, 0.0)
    } else if (1.0 - t).abs() < 1e-9 {
        (i0, 1.0)
    } else {
        (i0, t)
    }
}

/// Interpolates each direction of an angular field onto `target`.
pub fn interpolate_angular(f: &AngularField, target: &Grid2D) -> Result<AngularField> {
    let mut values = Vec::with_capacity(target.len() * f.dirs.len());
    for d in 0..f.dirs.len() {
        values.extend(interpolate(&f.direction_field(d), target)?.values);
    }
    Ok(AngularField {
        grid: *target,
        dirs: f.dirs,
        values,
    })
}

/// `||approx - truth|| / ||truth||` in the trapezoid-weighted L2 norm.
pub fn relative_l2_error(approx: &ScalarField, truth: &ScalarField) -> Result<f64> {
    let denom = truth.l2_norm();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(approx.sub(truth)?.l2_norm() / denom)
}

/// Human-readable summary used in logs.
pub fn describe(grid: &Grid2D) -> String {
    format!(
        "{}x{} on [{}, {}]x[{}, {}]",
        grid.nx, grid.ny, grid.x1_min, grid.x1_max, grid.x2_min, grid.x2_max
    )
}

//! Experiment configuration: the TOML schema, presets and conversion into
//! core types.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use umblt_core::grid::{DirectionSet, Grid2D, ScalarField};
use umblt_core::inversion::{BasisSet, FredholmSettings, Method, NeumannSettings, SeriesSign};
use umblt_core::medium::{OpticalMedium, ScatteringKernel};
use umblt_core::phantoms::{render, PhantomSpec, SheppLoganVariant};
use umblt_core::transport::{Scheme, SolverSettings};

const PRESETS: [&str; 4] = [
    include_str!("../presets/experiment-1.toml"),
    include_str!("../presets/experiment-2.toml"),
    include_str!("../presets/experiment-3.toml"),
    include_str!("../presets/experiment-4.toml"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodSpec {
    Neumann,
    Fredholm,
}

impl From<MethodSpec> for Method {
    fn from(m: MethodSpec) -> Self {
        match m {
            MethodSpec::Neumann => Method::Neumann,
            MethodSpec::Fredholm => Method::Fredholm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x1: [f64; 2],
    pub x2: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub forward: [usize; 2],
    pub reconstruction: [usize; 2],
    pub directions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpec {
    /// `[c0, c1, c2]` for `c0 + c1 x1 + c2 x2`.
    Affine([f64; 3]),
    Constant(f64),
    /// ScalarField CSV, bilinearly resampled onto the forward grid.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    None,
    Hg(f64),
    /// Densities at angular offsets `j * 2 pi / M`, `j = 0..M`.
    Tabulated(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub sigma: SigmaSpec,
    pub kernel: KernelSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantSpec {
    #[default]
    Classic,
    Modified,
}

impl From<VariantSpec> for SheppLoganVariant {
    fn from(v: VariantSpec) -> Self {
        match v {
            VariantSpec::Classic => SheppLoganVariant::Classic,
            VariantSpec::Modified => SheppLoganVariant::Modified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianParams {
    pub center: [f64; 2],
    /// Exponent coefficient in `exp(-rate |x - center|^2)`.
    pub rate: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheppLoganParams {
    #[serde(default)]
    pub variant: VariantSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothedParams {
    #[serde(default)]
    pub variant: VariantSpec,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Gaussian(GaussianParams),
    SheppLogan(SheppLoganParams),
    SmoothedSheppLogan(SmoothedParams),
    Affine([f64; 3]),
    Constant(f64),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub phantom: PhantomKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointSpec {
    /// Constant outflow data for `v0` on the outgoing boundary.
    pub outflow: f64,
}

impl Default for AdjointSpec {
    fn default() -> Self {
        Self { outflow: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeSpec {
    SourceIteration,
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub scheme: SchemeSpec,
    #[serde(default = "one")]
    pub damping: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverSettings::default();
        Self {
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            scheme: SchemeSpec::SourceIteration,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignSpec {
    Alternating,
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeumannSpec {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub sign: SignSpec,
}

impl Default for NeumannSpec {
    fn default() -> Self {
        let d = NeumannSettings::default();
        Self {
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            sign: SignSpec::Alternating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FredholmSpec {
    pub relative_threshold: f64,
    pub polynomials: bool,
    pub pyramids: bool,
    /// Directory for cached basis images; defaults to `<output_dir>/basis-cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for FredholmSpec {
    fn default() -> Self {
        Self {
            relative_threshold: FredholmSettings::default().relative_threshold,
            polynomials: true,
            pyramids: true,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: MethodSpec,
    pub noise_levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub write_pgm: bool,
    pub domain: DomainSpec,
    pub grids: GridSpec,
    pub medium: MediumSpec,
    #[serde(default)]
    pub adjoint: AdjointSpec,
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub neumann: NeumannSpec,
    #[serde(default)]
    pub fredholm: FredholmSpec,
}

impl ExperimentConfig {
    /// One of the four preset experiments.
    pub fn preset(n: usize) -> Result<Self> {
        ensure!((1..=4).contains(&n), "unknown experiment preset {n}; expected 1, 2, 3 or 4");
        Self::parse(PRESETS[n - 1])
    }

    pub fn preset_text(n: usize) -> Result<&'static str> {
        ensure!((1..=4).contains(&n), "unknown experiment preset {n}; expected 1, 2, 3 or 4");
        Ok(PRESETS[n - 1])
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid experiment configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes CSV paths inside the config relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let SigmaSpec::Csv(p) = &mut self.medium.sigma {
            fix(p);
        }
        for s in &mut self.sources {
            if let PhantomKind::Csv(p) = &mut s.phantom {
                fix(p);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.forward_grid()?;
        self.reconstruction_grid()?;
        self.directions()?;
        ensure!(!self.sources.is_empty(), "at least one source is required");
        ensure!(!self.noise_levels.is_empty(), "at least one noise level is required");
        for &level in &self.noise_levels {
            ensure!((0.0..1.0).contains(&level), "noise level {level} outside [0, 1)");
        }
        if self.noise_levels.iter().any(|&l| l > 0.0) {
            ensure!(self.seed.is_some(), "a seed is required when any noise level is positive");
        }
        let mut names: Vec<&str> = self.sources.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        ensure!(names.len() == self.sources.len(), "source names must be unique");
        for s in &self.sources {
            ensure!(
                !s.name.is_empty() && s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'),
                "source name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                s.name
            );
        }
        ensure!(self.adjoint.outflow.is_finite(), "adjoint outflow must be finite");
        self.solver_settings().validate()?;
        let n = self.neumann_settings();
        ensure!(n.tolerance > 0.0 && n.max_iterations > 0, "neumann tolerance and iteration budget must be positive");
        ensure!(self.fredholm.relative_threshold >= 0.0, "fredholm threshold must be non-negative");
        ensure!(self.fredholm.polynomials || self.fredholm.pyramids, "the basis needs polynomials, pyramids or both");
        Ok(())
    }

    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let d = &self.domain;
        ((d.x1[0], d.x1[1]), (d.x2[0], d.x2[1]))
    }

    pub fn forward_grid(&self) -> Result<Grid2D> {
        let (x1, x2) = self.bounds();
        Ok(Grid2D::new(self.grids.forward[0], self.grids.forward[1], x1, x2)?)
    }

    pub fn reconstruction_grid(&self) -> Result<Grid2D> {
        let (x1, x2) = self.bounds();
        Ok(Grid2D::new(self.grids.reconstruction[0], self.grids.reconstruction[1], x1, x2)?)
    }

    pub fn directions(&self) -> Result<DirectionSet> {
        Ok(DirectionSet::new(self.grids.directions)?)
    }

    pub fn solver_settings(&self) -> SolverSettings {
        let s = &self.solver;
        SolverSettings {
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            scheme: match s.scheme {
                SchemeSpec::SourceIteration => Scheme::SourceIteration,
                SchemeSpec::Jacobi => Scheme::Jacobi { damping: s.damping },
            },
        }
    }

    pub fn neumann_settings(&self) -> NeumannSettings {
        NeumannSettings {
            tolerance: self.neumann.tolerance,
            max_iterations: self.neumann.max_iterations,
            sign: match self.neumann.sign {
                SignSpec::Alternating => SeriesSign::Alternating,
                SignSpec::AsPrinted => SeriesSign::AsPrinted,
            },
            ..NeumannSettings::default()
        }
    }

    pub fn fredholm_settings(&self) -> FredholmSettings {
        FredholmSettings {
            relative_threshold: self.fredholm.relative_threshold,
        }
    }

    pub fn basis(&self) -> Result<BasisSet> {
        Ok(BasisSet {
            use_polynomials: self.fredholm.polynomials,
            use_pyramids: self.fredholm.pyramids,
            ..BasisSet::standard(self.reconstruction_grid()?)
        })
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.fredholm.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("basis-cache"))
    }

    /// Optical medium sampled on the forward grid.
    pub fn medium(&self) -> Result<OpticalMedium> {
        let grid = self.forward_grid()?;
        let sigma = match &self.medium.sigma {
            SigmaSpec::Affine([c0, c1, c2]) => render(&PhantomSpec::Affine { c0: *c0, c1: *c1, c2: *c2 }, &grid)?,
            SigmaSpec::Constant(c) => ScalarField::constant(grid, *c),
            SigmaSpec::Csv(path) => read_field_on(path, &grid)?,
        };
        let kernel = match &self.medium.kernel {
            KernelSpec::None => ScatteringKernel::None,
            KernelSpec::Hg(g) => ScatteringKernel::HenyeyGreenstein { g: *g },
            KernelSpec::Tabulated(t) => ScatteringKernel::Tabulated(t.clone()),
        };
        Ok(OpticalMedium::new(sigma, kernel, self.directions()?)?)
    }

    pub fn source(&self, name: &str) -> Result<&SourceSpec> {
        match self.sources.iter().find(|s| s.name == name) {
            Some(s) => Ok(s),
            None => bail!("no source named {name:?} in the configuration"),
        }
    }
}

/// Renders a source phantom on `grid`.
pub fn render_source(kind: &PhantomKind, grid: &Grid2D) -> Result<ScalarField> {
    let spec = match kind {
        PhantomKind::Gaussian(p) => PhantomSpec::Gaussian {
            center: (p.center[0], p.center[1]),
            rate: p.rate,
            amplitude: p.amplitude,
        },
        PhantomKind::SheppLogan(p) => PhantomSpec::SheppLogan {
            variant: p.variant.into(),
        },
        PhantomKind::SmoothedSheppLogan(p) => PhantomSpec::SmoothedSheppLogan {
            variant: p.variant.into(),
            std: p.std,
        },
        PhantomKind::Affine([c0, c1, c2]) => PhantomSpec::Affine { c0: *c0, c1: *c1, c2: *c2 },
        PhantomKind::Constant(c) => PhantomSpec::Constant(*c),
        PhantomKind::Csv(path) => return read_field_on(path, grid),
    };
    Ok(render(&spec, grid)?)
}

fn read_field_on(path: &Path, grid: &Grid2D) -> Result<ScalarField> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let field = ScalarField::read_csv(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))?;
    Ok(umblt_core::grid::interpolate(&field, grid)?)
}

//! Measurement synthesis, noise injection and reconstruction for one
//! experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use umblt_core::functional::{internal_functional, ForwardModel, InternalFunctional};
use umblt_core::grid::{interpolate, interpolate_angular, AngularField, ScalarField};
use umblt_core::inversion::{evaluate_basis, fredholm_invert, neumann_invert, BasisColumns, Method, ReconstructionResult};
use umblt_core::medium::{check_wellposedness, contraction_audit, OpticalMedium};
use umblt_core::transport::{solve_adjoint, solve_forward, BoundaryData, Scheme, TransportSolution};

use crate::config::{render_source, ExperimentConfig, SourceSpec};

/// Well-posedness and contraction figures of the forward-grid medium.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub rho: f64,
    pub inf_sigma: f64,
    pub alpha: f64,
    pub x1_holds: bool,
    pub diameter: f64,
    pub diam_rho: f64,
    pub x2_holds: bool,
    pub v0_min: f64,
    pub v0_sup: f64,
    pub v0_integral_min: f64,
    pub bound_x1: f64,
    pub bound_x2: f64,
    pub neumann_guaranteed: bool,
}

impl AuditSummary {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!(
                "well-posedness: rho = {:.6}, inf sigma = {:.6}, alpha = {:.6} ({}), diam * rho = {:.6} ({})",
                self.rho,
                self.inf_sigma,
                self.alpha,
                holds(self.x1_holds),
                self.diam_rho,
                holds(self.x2_holds)
            ),
            format!(
                "adjoint weight: min v0 = {:.6}, sup v0 = {:.6}, inf of angular integral = {:.6}",
                self.v0_min, self.v0_sup, self.v0_integral_min
            ),
            format!(
                "contraction bounds: first = {:.6}, second = {:.6}, neumann convergence guaranteed: {}",
                self.bound_x1,
                self.bound_x2,
                if self.neumann_guaranteed { "yes" } else { "no" }
            ),
        ]
    }
}

fn holds(flag: bool) -> &'static str {
    if flag {
        "holds"
    } else {
        "fails"
    }
}

/// Medium, adjoint weight and forward models on both grids.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub forward_model: ForwardModel,
    pub reconstruction_model: ForwardModel,
    pub adjoint: TransportSolution,
    pub audit: AuditSummary,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let forward_grid = config.forward_grid()?;
        let recon_grid = config.reconstruction_grid()?;
        if forward_grid == recon_grid {
            warn!("forward and reconstruction grids coincide: results are an inverse crime");
        }
        let medium = config.medium()?;
        let settings = config.solver_settings();
        let adjoint = solve_adjoint(&medium, &BoundaryData::Constant(config.adjoint.outflow), &settings).context("adjoint solve")?;
        info!("adjoint solve: {} iterations", adjoint.iterations);
        let audit = audit(&medium, &adjoint.field)?;
        let recon_medium = medium.on_grid(&recon_grid)?;
        let recon_v0 = interpolate_angular(&adjoint.field, &recon_grid)?;
        let forward_model = ForwardModel::new(medium, adjoint.field.clone(), settings)?;
        let reconstruction_model = ForwardModel::new(recon_medium, recon_v0, settings)?;
        Ok(Self {
            config: config.clone(),
            forward_model,
            reconstruction_model,
            adjoint,
            audit,
        })
    }

    pub fn medium(&self) -> &OpticalMedium {
        self.forward_model.medium()
    }
}

/// Audit of a medium against an adjoint weight.
pub fn audit(medium: &OpticalMedium, v0: &AngularField) -> Result<AuditSummary> {
    let wp = check_wellposedness(medium);
    let c = contraction_audit(medium, v0)?;
    let integral = umblt_core::grid::angular_integrate(v0)?;
    Ok(AuditSummary {
        rho: wp.rho,
        inf_sigma: wp.inf_sigma,
        alpha: wp.alpha,
        x1_holds: wp.x1_holds,
        diameter: wp.diameter,
        diam_rho: wp.diam_rho,
        x2_holds: wp.x2_holds,
        v0_min: v0.min(),
        v0_sup: c.v0_sup,
        v0_integral_min: integral.min(),
        bound_x1: c.bound_x1,
        bound_x2: c.bound_x2,
        neumann_guaranteed: c.neumann_guaranteed,
    })
}

/// Synthetic data for one source.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub name: String,
    /// Source rendered on the forward grid.
    pub source: ScalarField,
    /// Forward solution on the forward grid.
    pub forward: TransportSolution,
    /// Internal functional on the forward grid.
    pub h_forward: InternalFunctional,
    /// Internal functional on the reconstruction grid.
    pub h: InternalFunctional,
    /// Source interpolated to the reconstruction grid.
    pub truth: ScalarField,
}

/// Renders the source, solves the forward problem on the forward grid,
/// forms the internal functional there and carries it to the reconstruction grid.
pub fn synthesize_measurement(setup: &Setup, source: &SourceSpec) -> Result<Measurement> {
    let fm = &setup.forward_model;
    let grid = *fm.grid();
    let recon_grid = *setup.reconstruction_model.grid();
    let s = render_source(&source.phantom, &grid)?;
    let forward = solve_forward(fm.medium(), &s, &BoundaryData::Zero, fm.settings()).with_context(|| format!("forward solve for {}", source.name))?;
    let mut h_forward = internal_functional(&forward.field, fm.v0(), &s, fm.medium())?;
    h_forward.v0_meta = format!("constant outflow {}", setup.config.adjoint.outflow);
    let h = InternalFunctional {
        h: interpolate(&h_forward.h, &recon_grid)?,
        v0_meta: h_forward.v0_meta.clone(),
    };
    let truth = interpolate(&s, &recon_grid)?;
    Ok(Measurement {
        name: source.name.clone(),
        source: s,
        forward,
        h_forward,
        h,
        truth,
    })
}

/// `H (1 + level xi)` with `xi` i.i.d. uniform on `(-1, 1)` drawn from a
/// ChaCha8 stream seeded with `seed`. Level zero returns `H` unchanged.
pub fn add_noise(h: &InternalFunctional, level: f64, seed: u64) -> InternalFunctional {
    if level == 0.0 {
        return h.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = h.h.values().iter().map(|&v| v * (1.0 + level * rng.gen_range(-1.0..1.0))).collect();
    InternalFunctional {
        h: ScalarField::new(*h.h.grid(), values).expect("noise keeps values finite"),
        v0_meta: h.v0_meta.clone(),
    }
}

/// Seed of the noise stream for one (source, level) pair.
pub fn derive_seed(seed: u64, source_index: usize, level_index: usize) -> u64 {
    // splitmix64 finaliser over the packed indices
    let mut z = seed ^ ((source_index as u64) << 32 | level_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Basis functions on the reconstruction grid and their images under `T`.
#[derive(Debug, Clone)]
pub struct FredholmSystem {
    pub basis: Vec<ScalarField>,
    pub columns: BasisColumns,
    pub cache_file: PathBuf,
    pub cache_hit: bool,
}

fn hash_field(hasher: &mut Sha256, values: &[f64]) {
    for v in values {
        hasher.update(v.to_bits().to_le_bytes());
    }
}

/// Key identifying the basis images of a reconstruction model.
pub fn column_cache_key(setup: &Setup) -> Result<String> {
    let model = &setup.reconstruction_model;
    let g = model.grid();
    let basis = setup.config.basis()?;
    let settings = model.settings();
    let mut hasher = Sha256::new();
    hasher.update(b"umblt basis columns v1");
    for n in [g.nx, g.ny, model.medium().directions().len(), basis.polynomial_degree, basis.pyramid_cells, settings.max_iterations] {
        hasher.update((n as u64).to_le_bytes());
    }
    hasher.update([basis.use_polynomials as u8, basis.use_pyramids as u8]);
    let scheme = match settings.scheme {
        Scheme::SourceIteration => [0.0, 0.0],
        Scheme::Jacobi { damping } => [1.0, damping],
    };
    hash_field(&mut hasher, &[g.x1_min, g.x1_max, g.x2_min, g.x2_max, settings.tolerance, scheme[0], scheme[1]]);
    hash_field(&mut hasher, model.medium().sigma().values());
    hash_field(&mut hasher, model.medium().table());
    if let Some(scale) = model.medium().kernel_scale() {
        hash_field(&mut hasher, scale.values());
    }
    hash_field(&mut hasher, model.v0().values());
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Loads the basis images from the cache directory or computes and stores them.
pub fn fredholm_system(setup: &Setup) -> Result<FredholmSystem> {
    let model = &setup.reconstruction_model;
    let basis = evaluate_basis(&setup.config.basis()?, model.grid())?;
    let dir = setup.config.cache_dir();
    let file = dir.join(format!("{}.bin", column_cache_key(setup)?));
    if let Ok(bytes) = fs::read(&file) {
        match BasisColumns::read_from(bytes.as_slice()) {
            Ok(columns) if columns.columns.len() == basis.len() && columns.grid == *model.grid() => {
                info!("basis images loaded from {}", file.display());
                return Ok(FredholmSystem {
                    basis,
                    columns,
                    cache_file: file,
                    cache_hit: true,
                });
            }
            _ => warn!("ignoring unreadable basis cache {}", file.display()),
        }
    }
    info!("computing {} basis images", basis.len());
    let columns = BasisColumns::compute(model, &basis)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    // write then rename so concurrent runs never observe a partial file
    let tmp = dir.join(format!(".{}.{}.tmp", file.file_name().unwrap().to_string_lossy(), std::process::id()));
    let mut bytes = Vec::new();
    columns.write_to(&mut bytes)?;
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, &file)?;
    Ok(FredholmSystem {
        basis,
        columns,
        cache_file: file,
        cache_hit: false,
    })
}

/// Runs the configured inversion on a reconstruction-grid functional.
pub fn reconstruct(setup: &Setup, h: &InternalFunctional, method: Method, system: Option<&FredholmSystem>) -> Result<ReconstructionResult> {
    let model = &setup.reconstruction_model;
    Ok(match method {
        Method::Neumann => neumann_invert(h, model, &setup.config.neumann_settings())?,
        Method::Fredholm => {
            let owned;
            let system = match system {
                Some(s) => s,
                None => {
                    owned = fredholm_system(setup)?;
                    &owned
                }
            };
            fredholm_invert(h, model, &system.basis, &system.columns, &setup.config.fredholm_settings())?
        }
    })
}

/// `||T[S_rec] - M[H]|| / ||M[H]||` on the reconstruction grid.
pub fn fixed_point_residual(setup: &Setup, h: &InternalFunctional, source: &ScalarField) -> Result<f64> {
    let model = &setup.reconstruction_model;
    let target = model.op_m(&h.h)?;
    let image = model.forward_map_t(source)?;
    Ok(image.sub(&target)?.l2_norm() / target.l2_norm())
}

/// Writes every direction of an angular field as `<prefix>-d<k>.csv`.
pub fn write_angular(dir: &Path, prefix: &str, field: &AngularField) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    (0..field.directions().len())
        .map(|d| {
            let path = dir.join(format!("{prefix}-d{d}.csv"));
            crate::output::write_csv(&path, &field.direction_field(d))?;
            Ok(path)
        })
        .collect()
}

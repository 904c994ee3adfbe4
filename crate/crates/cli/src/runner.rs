//! End-to-end experiment runs and their reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::{error, info};
use serde::Serialize;
use umblt_core::grid::relative_l2_error;
use umblt_core::inversion::Method;

use crate::config::ExperimentConfig;
use crate::output::{write_csv, write_pgm};
use crate::pipeline::{add_noise, derive_seed, fixed_point_residual, fredholm_system, reconstruct, synthesize_measurement, AuditSummary, FredholmSystem, Setup};

/// Outcome of one (source, noise level) reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub source: String,
    pub noise_level: f64,
    /// Seed of the noise stream; absent for the noiseless level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_l2_error: Option<f64>,
    /// Neumann corrections or Fredholm effective rank.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations_or_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    /// `||T[S_rec] - M[H]|| / ||M[H]||`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_point_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gram_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_size: Option<usize>,
    pub residual_history: Vec<f64>,
    pub wall_seconds: f64,
    pub directory: PathBuf,
    pub files: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceReport {
    pub name: String,
    pub forward_iterations: usize,
    pub synthesis_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub method: String,
    pub forward_grid: [usize; 2],
    pub reconstruction_grid: [usize; 2],
    pub directions: usize,
    pub solver_tolerance: f64,
    pub adjoint_iterations: usize,
    pub audit: AuditSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_cache: Option<PathBuf>,
    pub sources: Vec<SourceReport>,
    pub levels: Vec<LevelReport>,
    pub total_seconds: f64,
    pub summary_file: PathBuf,
}

impl RunReport {
    pub fn level(&self, source: &str, noise: f64) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.source == source && l.noise_level == noise)
    }

    /// Human-readable table of the run.
    pub fn table(&self) -> String {
        let mut out = format!("{} ({}, forward {}x{}, reconstruction {}x{}, M = {})\n", self.name, self.method, self.forward_grid[0], self.forward_grid[1], self.reconstruction_grid[0], self.reconstruction_grid[1], self.directions);
        for line in self.audit.lines() {
            out.push_str(&format!("  {line}\n"));
        }
        out.push_str(&format!("  {:<8} {:>7} {:>14} {:>10} {:>13}\n", "source", "noise", "rel. L2 error", "iter/rank", "wall time [s]"));
        for l in &self.levels {
            match (&l.error, l.relative_l2_error) {
                (None, Some(e)) => out.push_str(&format!(
                    "  {:<8} {:>6.1}% {:>13.4}% {:>10} {:>13.2}\n",
                    l.source,
                    100.0 * l.noise_level,
                    100.0 * e,
                    l.iterations_or_rank.map_or("-".into(), |n| n.to_string()),
                    l.wall_seconds
                )),
                (err, _) => out.push_str(&format!("  {:<8} {:>6.1}% failed: {}\n", l.source, 100.0 * l.noise_level, err.as_deref().unwrap_or("unknown"))),
            }
        }
        out
    }
}

fn level_dir(out: &Path, source: &str, level: f64) -> PathBuf {
    out.join(source).join(format!("noise-{level}"))
}

/// Synthesis, noise, inversion and error evaluation for every source and
/// noise level of `config`. Files go to `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let setup = Setup::new(config)?;
    for line in setup.audit.lines() {
        info!("{line}");
    }
    let out = &config.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let method: Method = config.method.into();
    let system: Option<FredholmSystem> = match method {
        Method::Fredholm => Some(fredholm_system(&setup)?),
        Method::Neumann => None,
    };

    let mut sources = Vec::new();
    let mut levels = Vec::new();
    for (si, spec) in config.sources.iter().enumerate() {
        let t = Instant::now();
        let measurement = match synthesize_measurement(&setup, spec) {
            Ok(m) => m,
            Err(e) => {
                error!("synthesis of {} failed: {e:#}", spec.name);
                for &level in &config.noise_levels {
                    levels.push(failed_level(&spec.name, level, None, level_dir(out, &spec.name, level), format!("{e:#}")));
                }
                continue;
            }
        };
        sources.push(SourceReport {
            name: spec.name.clone(),
            forward_iterations: measurement.forward.iterations,
            synthesis_seconds: t.elapsed().as_secs_f64(),
        });
        let source_dir = out.join(&spec.name);
        fs::create_dir_all(&source_dir)?;
        write_csv(&source_dir.join("measurement.csv"), &measurement.h.h)?;

        for (li, &level) in config.noise_levels.iter().enumerate() {
            let t = Instant::now();
            let seed = (level > 0.0).then(|| derive_seed(config.seed.unwrap_or(0), si, li));
            let dir = level_dir(out, &spec.name, level);
            let outcome = (|| -> Result<LevelReport> {
                let noisy = add_noise(&measurement.h, level, seed.unwrap_or(0));
                let rec = reconstruct(&setup, &noisy, method, system.as_ref())?;
                let err = relative_l2_error(&rec.source, &measurement.truth)?;
                let fixed_point = match method {
                    Method::Neumann => Some(fixed_point_residual(&setup, &noisy, &rec.source)?),
                    Method::Fredholm => None,
                };
                fs::create_dir_all(&dir)?;
                let difference = measurement.truth.sub(&rec.source)?;
                let mut files = Vec::new();
                for (stem, field) in [("truth", &measurement.truth), ("reconstruction", &rec.source), ("difference", &difference)] {
                    let path = dir.join(format!("{stem}.csv"));
                    write_csv(&path, field)?;
                    files.push(path);
                    if config.write_pgm {
                        let path = dir.join(format!("{stem}.pgm"));
                        write_pgm(&path, field)?;
                        files.push(path);
                    }
                }
                Ok(LevelReport {
                    source: spec.name.clone(),
                    noise_level: level,
                    noise_seed: seed,
                    relative_l2_error: Some(err),
                    iterations_or_rank: Some(rec.iterations_or_rank),
                    converged: Some(rec.converged),
                    fixed_point_residual: fixed_point,
                    gram_residual: rec.gram_residual,
                    basis_size: rec.basis_size,
                    residual_history: rec.residual_history,
                    wall_seconds: t.elapsed().as_secs_f64(),
                    directory: dir.clone(),
                    files,
                    error: None,
                })
            })();
            let report = outcome.unwrap_or_else(|e| {
                error!("{} at noise {level} failed: {e:#}", spec.name);
                failed_level(&spec.name, level, seed, dir.clone(), format!("{e:#}"))
            });
            if let Some(e) = report.relative_l2_error {
                info!("{} noise {level}: relative error {:.4}%", spec.name, 100.0 * e);
            }
            levels.push(report);
        }
    }

    let mut report = RunReport {
        name: config.name.clone(),
        method: method.to_string(),
        forward_grid: config.grids.forward,
        reconstruction_grid: config.grids.reconstruction,
        directions: config.grids.directions,
        solver_tolerance: config.solver.tolerance,
        adjoint_iterations: setup.adjoint.iterations,
        audit: setup.audit.clone(),
        basis_cache: system.as_ref().map(|s| s.cache_file.clone()),
        sources,
        levels,
        total_seconds: 0.0,
        summary_file: out.join("summary.toml"),
    };
    report.total_seconds = start.elapsed().as_secs_f64();
    let text = toml::to_string_pretty(&report).context("serialising run summary")?;
    fs::write(&report.summary_file, text).with_context(|| format!("writing {}", report.summary_file.display()))?;
    Ok(report)
}

fn failed_level(source: &str, level: f64, seed: Option<u64>, directory: PathBuf, error: String) -> LevelReport {
    LevelReport {
        source: source.to_string(),
        noise_level: level,
        noise_seed: seed,
        relative_l2_error: None,
        iterations_or_rank: None,
        converged: None,
        fixed_point_residual: None,
        gram_residual: None,
        basis_size: None,
        residual_history: Vec::new(),
        wall_seconds: 0.0,
        directory,
        files: Vec::new(),
        error: Some(error),
    }
}

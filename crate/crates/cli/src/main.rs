use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use umblt_cli::config::{ExperimentConfig, MethodSpec};
use umblt_cli::output::{read_csv, write_csv};
use umblt_cli::pipeline::{add_noise, derive_seed, fixed_point_residual, reconstruct, synthesize_measurement, write_angular, Setup};
use umblt_cli::runner::run_experiment;
use umblt_core::functional::InternalFunctional;
use umblt_core::grid::{interpolate, relative_l2_error};
use umblt_core::inversion::Method;

#[derive(Parser, Debug)]
#[command(name = "umblt", version, about = "Radiative transfer solves and single-functional source reconstruction")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration file (TOML); defaults to the selected preset
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no configuration file is given
    #[arg(long, global = true, default_value_t = 1)]
    preset: usize,
    /// Seed of the noise generator
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated noise levels, e.g. 0,0.01,0.05
    #[arg(long, global = true, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Forward grid node counts
    #[arg(long, global = true, num_args = 2, value_names = ["NX", "NY"])]
    grid: Option<Vec<usize>>,
    /// Reconstruction grid node counts
    #[arg(long = "recon-grid", global = true, num_args = 2, value_names = ["NX", "NY"])]
    recon_grid: Option<Vec<usize>>,
    /// Number of discrete directions
    #[arg(long, global = true)]
    directions: Option<usize>,
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MethodArg {
    Neumann,
    Fredholm,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the forward problem for one source and write u per direction
    Forward {
        /// Source name from the configuration (default: the first)
        #[arg(long)]
        source: Option<String>,
    },
    /// Solve the adjoint problem and write v0 per direction
    Adjoint,
    /// Write the internal functional of one source on both grids
    Synthesize {
        #[arg(long)]
        source: Option<String>,
    },
    /// Reconstruct a source from an internal functional
    Invert {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Internal functional CSV; synthesised from the source when absent
        #[arg(long)]
        measurement: Option<PathBuf>,
        /// Ground-truth CSV used for the error report with --measurement
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
    },
    /// Run one of the four preset experiments
    Experiment {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        number: u8,
    },
    /// Report well-posedness and contraction conditions
    Audit,
    /// Print the effective configuration
    ShowConfig,
}

fn load_config(global: &Global, preset: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = match (&global.config, preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (Some(_), Some(_)) => bail!("--config cannot be combined with an experiment preset"),
        (None, p) => ExperimentConfig::preset(p.unwrap_or(global.preset))?,
    };
    if let Some(seed) = global.seed {
        cfg.seed = Some(seed);
    }
    if let Some(noise) = &global.noise {
        cfg.noise_levels = noise.clone();
    }
    if let Some(out) = &global.out {
        cfg.output_dir = out.clone();
    }
    if let Some(g) = &global.grid {
        cfg.grids.forward = [g[0], g[1]];
    }
    if let Some(g) = &global.recon_grid {
        cfg.grids.reconstruction = [g[0], g[1]];
    }
    if let Some(m) = global.directions {
        cfg.grids.directions = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick_source<'a>(cfg: &'a ExperimentConfig, name: &Option<String>) -> Result<&'a umblt_cli::config::SourceSpec> {
    match name {
        Some(n) => cfg.source(n),
        None => Ok(&cfg.sources[0]),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ShowConfig => {
            print!("{}", load_config(&cli.global, None)?.to_toml()?);
        }
        Command::Audit => {
            let cfg = load_config(&cli.global, None)?;
            let setup = Setup::new(&cfg)?;
            println!("{}", cfg.name);
            for line in setup.audit.lines() {
                println!("  {line}");
            }
        }
        Command::Adjoint => {
            let cfg = load_config(&cli.global, None)?;
            let setup = Setup::new(&cfg)?;
            let files = write_angular(&cfg.output_dir, "v0", &setup.adjoint.field)?;
            println!("adjoint: {} iterations, {} files in {}", setup.adjoint.iterations, files.len(), cfg.output_dir.display());
        }
        Command::Forward { source } => {
            let cfg = load_config(&cli.global, None)?;
            let setup = Setup::new(&cfg)?;
            let m = synthesize_measurement(&setup, pick_source(&cfg, &source)?)?;
            let files = write_angular(&cfg.output_dir, &format!("u-{}", m.name), &m.forward.field)?;
            write_csv(&cfg.output_dir.join(format!("source-{}.csv", m.name)), &m.source)?;
            println!("forward {}: {} iterations, {} files in {}", m.name, m.forward.iterations, files.len(), cfg.output_dir.display());
        }
        Command::Synthesize { source } => {
            let cfg = load_config(&cli.global, None)?;
            let setup = Setup::new(&cfg)?;
            let m = synthesize_measurement(&setup, pick_source(&cfg, &source)?)?;
            fs::create_dir_all(&cfg.output_dir)?;
            write_csv(&cfg.output_dir.join(format!("h-forward-{}.csv", m.name)), &m.h_forward.h)?;
            write_csv(&cfg.output_dir.join(format!("h-{}.csv", m.name)), &m.h.h)?;
            write_csv(&cfg.output_dir.join(format!("truth-{}.csv", m.name)), &m.truth)?;
            println!("synthesised {} into {}", m.name, cfg.output_dir.display());
        }
        Command::Invert { method, measurement, truth, source } => {
            let mut cfg = load_config(&cli.global, None)?;
            if let Some(m) = method {
                cfg.method = match m {
                    MethodArg::Neumann => MethodSpec::Neumann,
                    MethodArg::Fredholm => MethodSpec::Fredholm,
                };
            }
            invert(&cfg, measurement.as_deref(), truth.as_deref(), &source)?;
        }
        Command::Experiment { number } => {
            let cfg = load_config(&cli.global, Some(number as usize))?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.table());
            if report.method == "neumann" && !report.audit.neumann_guaranteed {
                let all = report.levels.iter().all(|l| l.converged == Some(true));
                println!("  contraction not certified by the audit; neumann series converged at every level: {}", if all { "yes" } else { "no" });
            }
            println!("  summary written to {}", report.summary_file.display());
            if let Some(failed) = report.levels.iter().find(|l| l.error.is_some()) {
                bail!("{} at noise {} failed: {}", failed.source, failed.noise_level, failed.error.as_deref().unwrap_or(""));
            }
        }
    }
    Ok(())
}

fn invert(cfg: &ExperimentConfig, measurement: Option<&Path>, truth: Option<&Path>, source: &Option<String>) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let grid = *setup.reconstruction_model.grid();
    let (h, truth) = match measurement {
        Some(path) => {
            let raw = read_csv(path)?;
            let h = InternalFunctional {
                h: interpolate(&raw, &grid).context("resampling the measurement onto the reconstruction grid")?,
                v0_meta: format!("read from {}", path.display()),
            };
            let truth = truth.map(|p| read_csv(p).and_then(|t| Ok(interpolate(&t, &grid)?))).transpose()?;
            (h, truth)
        }
        None => {
            let m = synthesize_measurement(&setup, pick_source(cfg, source)?)?;
            (m.h, Some(m.truth))
        }
    };
    let method: Method = cfg.method.into();
    fs::create_dir_all(&cfg.output_dir)?;
    for (li, &level) in cfg.noise_levels.iter().enumerate() {
        let noisy = add_noise(&h, level, derive_seed(cfg.seed.unwrap_or(0), 0, li));
        let rec = reconstruct(&setup, &noisy, method, None)?;
        let path = cfg.output_dir.join(format!("reconstruction-noise-{level}.csv"));
        write_csv(&path, &rec.source)?;
        let mut line = format!("{method} noise {level}: iterations/rank {}, converged {}", rec.iterations_or_rank, rec.converged);
        match method {
            Method::Neumann => line += &format!(", fixed-point residual {:.3e}", fixed_point_residual(&setup, &noisy, &rec.source)?),
            Method::Fredholm => line += &format!(", gram residual {:.3e}", rec.gram_residual.unwrap_or(0.0)),
        }
        if let Some(t) = &truth {
            line += &format!(", relative L2 error {:.4}%", 100.0 * relative_l2_error(&rec.source, t)?);
        }
        println!("{line} -> {}", path.display());
    }
    Ok(())
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{{\"status\":\"error\",\"message\":\"{}\"}}", json_escape(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}

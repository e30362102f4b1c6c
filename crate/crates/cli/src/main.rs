//! `oedtomo`: dataset generation and design experiments for sparse-angle
//! tomography.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "oedtomo", version, about = "Optimal projection angles for constrained tomography")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for per-sample solves.
    #[arg(long, global = true, env = "OEDTOMO_WORKERS")]
    workers: Option<String>,
    /// Random seed (dataset, noise and start designs).
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Extra `key=value` settings, applied after the configuration file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a training set file.
    Generate(GenerateArgs),
    /// Scan a two-angle objective over [0, 180]^2.
    Landscape(LandscapeArgs),
    /// Sparse weights on a fixed angle grid (two-phase solve or beta sweep).
    #[command(name = "oed-a")]
    OedA(OedAArgs),
    /// Continuous angle placement from several starts.
    #[command(name = "oed-b")]
    OedB(OedBArgs),
    /// Reconstruction error against alpha at a fixed design.
    #[command(name = "alpha-sweep")]
    AlphaSweep(AlphaSweepArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// rectangles, pentagons, shapes or phantom.
    kind: String,
    #[arg(long)]
    count: Option<String>,
    /// Grid side length in pixels.
    #[arg(long)]
    size: Option<String>,
    /// Output file (default `<out>/<kind>.tomoset`).
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

/// Flags shared by the experiment subcommands.
#[derive(Debug, Args)]
struct ModelArgs {
    /// TOMOSET training set.
    #[arg(long)]
    dataset: Option<String>,
    /// unconstrained, nonnegative, box, box:LO:HI or equality:C.
    #[arg(long)]
    constraint: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Relative noise level.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    max_outer_iter: Option<String>,
}

impl ModelArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("dataset", self.dataset.clone()),
            ("constraint", self.constraint.clone()),
            ("alpha", self.alpha.clone()),
            ("sigma", self.sigma.clone()),
            ("noise_level", self.noise.clone()),
            ("max_outer_iter", self.max_outer_iter.clone()),
        ]
    }
}

#[derive(Debug, Args)]
struct LandscapeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Scan step in degrees.
    #[arg(long)]
    step: Option<String>,
    /// bayes (L = I), bayes-cov (sample covariance prior) or empirical.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Debug, Args)]
struct OedAArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    beta: Option<String>,
    /// Comma-separated sparsity weights; runs a sweep instead of one solve.
    #[arg(long)]
    betas: Option<String>,
    /// Angle grid spacing in degrees over [0, 180).
    #[arg(long)]
    angle_step: Option<String>,
}

#[derive(Debug, Args)]
struct OedBArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of angles.
    #[arg(long)]
    num_angles: Option<String>,
    /// Number of random starts.
    #[arg(long)]
    starts: Option<String>,
    /// Comma-separated ascending start design; replaces random starts.
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    lo: Option<String>,
    #[arg(long)]
    hi: Option<String>,
}

#[derive(Debug, Args)]
struct AlphaSweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated angles in degrees.
    #[arg(long)]
    design: Option<String>,
    /// Comma-separated constraints.
    #[arg(long)]
    constraints: Option<String>,
    #[arg(long)]
    alpha_min: Option<String>,
    #[arg(long)]
    alpha_max: Option<String>,
    #[arg(long)]
    alpha_count: Option<String>,
}

fn build_config(common: &Common, flags: Vec<(&'static str, Option<String>)>) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.set_pairs(&common.set)?;
    cfg.overlay(&flags)?;
    cfg.overlay(&[("workers", common.workers.clone()), ("seed", common.seed.clone())])?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.common.out.clone();
    match cli.command {
        Command::Generate(a) => {
            let cfg = build_config(&cli.common, vec![("count", a.count), ("size", a.size)])?;
            let path = a.output.unwrap_or_else(|| out.join(format!("{}.tomoset", a.kind)));
            commands::generate(&cfg, &a.kind, &path)
        }
        Command::Landscape(a) => {
            let mut flags = a.model.flags();
            flags.extend([("step", a.step), ("mode", a.mode)]);
            commands::landscape(&build_config(&cli.common, flags)?, &out)
        }
        Command::OedA(a) => {
            let mut flags = a.model.flags();
            flags.extend([("beta", a.beta), ("betas", a.betas), ("angle_step", a.angle_step)]);
            commands::oed_a(&build_config(&cli.common, flags)?, &out)
        }
        Command::OedB(a) => {
            let mut flags = a.model.flags();
            flags.extend([
                ("num_angles", a.num_angles),
                ("starts", a.starts),
                ("design", a.design),
                ("lo", a.lo),
                ("hi", a.hi),
            ]);
            commands::oed_b(&build_config(&cli.common, flags)?, &out)
        }
        Command::AlphaSweep(a) => {
            let mut flags = a.model.flags();
            flags.extend([
                ("design", a.design),
                ("constraints", a.constraints),
                ("alpha_min", a.alpha_min),
                ("alpha_max", a.alpha_max),
                ("alpha_count", a.alpha_count),
            ]);
            commands::alpha_sweep(&build_config(&cli.common, flags)?, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

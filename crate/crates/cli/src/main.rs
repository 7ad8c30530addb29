//! fluctlab: experiments on spatially weighted mean-field diffusions.
//!
//! Subcommands cover the χ(α) table, Riemann-residual ladders, particle and
//! mean-field simulation, fluctuation-field evaluation, martingale
//! cross-checks, scaling-regime classification, and an exact-identity suite.
//! Outputs are CSV/JSONL under --output-dir with a metadata echo; same argv
//! and seed reproduce byte-identical CSV bodies. Exit codes: 0 success,
//! 1 numeric failure, 2 configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "fluctlab", version, about = "mean-field lattice diffusion lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config document; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Base seed (fallback: config file, then $FLUCTLAB_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,

    /// Worker threads for replica-parallel commands (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tabulate χ(α) by series quadrature.
    Chi(ChiArgs),
    /// Riemann-sum residual ladder N^(1−α)·(mean_weight − ∫Ψ).
    Residual(ResidualArgs),
    /// Euler–Maruyama run of the N-particle system.
    Simulate(SimulateArgs),
    /// Mean-field density solve on the θ-grid.
    Mckv(MckvArgs),
    /// Fluctuation fields η/H and the duality identity, at t = 0 or along a trajectory.
    Fluct(FluctArgs),
    /// Monte-Carlo martingale variance against the 𝒦 covariance formula.
    Martingale(MartingaleArgs),
    /// Full ladder with exponent fit and regime classification.
    Scaling(ScalingArgs),
    /// All exact-identity checks at one (N, α, seed).
    IdentitySuite(IdentityArgs),
}

#[derive(Args, Debug)]
pub struct ChiArgs {
    /// Comma-separated α values in [0, 1).
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ResidualArgs {
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Strictly increasing N values, e.g. 1024,4096,16384.
    #[arg(long, value_delimiter = ',')]
    pub n_ladder: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// kuramoto | probe | free
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Lattice half-count N (2N particles).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Interaction strength (Kuramoto K or probe Γ).
    #[arg(long)]
    pub coupling_k: Option<f64>,
    /// direct | fast | auto
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub record_stride: Option<usize>,
    /// Evolve the coupled nonlinear copies and record the coupling error.
    #[arg(long)]
    pub coupled: bool,
}

#[derive(Args, Debug)]
pub struct MckvArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub coupling_k: Option<f64>,
    /// uniform | tilted
    #[arg(long)]
    pub initial: Option<String>,
}

#[derive(Args, Debug)]
pub struct FluctArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// 0 evaluates the initial-time fields over replicas; > 0 follows one trajectory.
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Args, Debug)]
pub struct MartingaleArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ScalingArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// sd | bias | coupling
    #[arg(long)]
    pub statistic: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub n_ladder: Option<Vec<usize>>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub coupling_k: Option<f64>,
    /// Slope tolerance for regime classification.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args, Debug)]
pub struct IdentityArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of random (state, g) duality pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
}

/// Failure taxonomy mapped to exit codes.
pub enum CliError {
    Config(String),
    Numeric(String),
}

impl CliError {
    fn report(&self) -> u8 {
        match self {
            CliError::Config(msg) => {
                eprintln!("error kind=config reason={:?}", msg);
                2
            }
            CliError::Numeric(msg) => {
                eprintln!("error kind=numeric reason={:?}", msg);
                1
            }
        }
    }
}

impl From<fluctlab_core::FluctError> for CliError {
    fn from(e: fluctlab_core::FluctError) -> Self {
        use fluctlab_core::FluctError::*;
        match e {
            InvalidParameter(_) | LengthMismatch { .. } | SeparableRequired(_)
            | CriticalAlpha(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error kind=config reason={:?}", e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(e.report()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file_cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    let seed = resolve_seed(&cli, &file_cfg)?;
    let output_dir = cli
        .output_dir
        .clone()
        .or_else(|| file_cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("fluctlab-out"));
    if let Some(workers) = cli.workers.or(file_cfg.workers) {
        // ignore the error if a pool already exists (e.g. repeated calls in tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let ctx = commands::Context {
        seed,
        output_dir,
        file_cfg,
    };
    match cli.command {
        Command::Chi(args) => commands::chi(&ctx, &args),
        Command::Residual(args) => commands::residual(&ctx, &args),
        Command::Simulate(args) => commands::simulate(&ctx, &args),
        Command::Mckv(args) => commands::mckv(&ctx, &args),
        Command::Fluct(args) => commands::fluct(&ctx, &args),
        Command::Martingale(args) => commands::martingale(&ctx, &args),
        Command::Scaling(args) => commands::scaling(&ctx, &args),
        Command::IdentitySuite(args) => commands::identity_suite(&ctx, &args),
    }
}

fn resolve_seed(cli: &Cli, file_cfg: &RunConfig) -> Result<u64, CliError> {
    if let Some(seed) = cli.seed {
        return Ok(seed);
    }
    if let Some(seed) = file_cfg.seed {
        return Ok(seed);
    }
    match std::env::var("FLUCTLAB_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map_err(|_| CliError::Config(format!("FLUCTLAB_SEED is not a u64: {text:?}"))),
        Err(_) => Ok(0),
    }
}

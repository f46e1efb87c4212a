//! `s2h`: generate synthetic pairs, register them, evaluate the results and
//! run the ambiguity and gradient demonstrations.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigArg, PairArgs, RegistrationArgs};

/// Invalid flags or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// How a command finished when it did not fail outright.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some items failed; the failures are recorded in the outputs.
    Partial,
}

#[derive(Parser, Debug)]
#[command(name = "s2h", version, about = "Soft-to-hard matching for rigid point-cloud registration")]
struct Cli {
    /// Worker threads for batch work (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate labeled synthetic pairs with sidecars and a manifest.
    Gen(GenArgs),
    /// Register every pair of a manifest into a JSON-lines results file.
    Register(RegisterArgs),
    /// Score a results file against the ground-truth sidecars.
    Eval(EvalArgs),
    /// Build many soft matrices with the same rotation and report how their
    /// virtual points degenerate.
    Ambiguity(AmbiguityArgs),
    /// Gradient descent on a free similarity matrix through the S-step.
    GradDemo(GradDemoArgs),
    /// Generate, register and evaluate an outlier-ratio sweep in memory.
    Sweep(SweepArgs),
}

#[derive(clap::Args, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated shapes: sphere, box, torus, blade, composite.
    #[arg(long, default_value = "composite")]
    pub shapes: String,
    /// Sample base clouds from this OFF mesh instead of procedural shapes.
    #[arg(long, conflicts_with = "shapes")]
    pub mesh: Option<PathBuf>,
    /// Pairs per shape (per ratio with --outlier-sweep).
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    /// Base seed; required here or in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated outlier ratios; overrides the sample size per ratio.
    #[arg(long)]
    pub outlier_sweep: Option<String>,
    /// Cloud file format: xyz or ply.
    #[arg(long, default_value = "xyz")]
    pub format: String,
    /// Overwrite an existing manifest.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(clap::Args, Debug)]
pub struct RegisterArgs {
    /// Batch manifest written by `gen` or by hand.
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON-lines results file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub registration: RegistrationArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// JSON-lines results file from `register`.
    #[arg(long)]
    pub results: PathBuf,
    /// Directory for metrics.csv, recall.csv and pairs.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Largest K of the recall curve.
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// One summary row per outlier ratio recorded in the sidecars.
    #[arg(long)]
    pub outlier_sweep: bool,
    /// Label of the summary row.
    #[arg(long, default_value = "all")]
    pub label: String,
}

#[derive(clap::Args, Debug)]
pub struct AmbiguityArgs {
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "composite")]
    pub shape: String,
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated multiples of the true singular values.
    #[arg(long, default_value = "1,10,0.5,2,5")]
    pub scales: String,
    /// Also halve each singular value that can be halved.
    #[arg(long)]
    pub halve: bool,
    /// Write the virtual clouds as PLY files into this directory.
    #[arg(long)]
    pub ply_dir: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct GradDemoArgs {
    /// Output CSV, one row per update.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points per cloud.
    #[arg(long, default_value_t = 16)]
    pub points: usize,
    /// Points of each cloud without a partner.
    #[arg(long, default_value_t = 4)]
    pub outliers: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long)]
    pub lambda_match: Option<f64>,
    #[arg(long)]
    pub lambda_inlier: Option<f64>,
    #[arg(long)]
    pub lambda_motion: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    /// Output CSV, one row per ratio.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "composite")]
    pub shape: String,
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6")]
    pub ratios: String,
    /// Pairs per ratio.
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub registration: RegistrationArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Register(a) => commands::register(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ambiguity(a) => commands::ambiguity(&a),
        Command::GradDemo(a) => commands::grad_demo(&a),
        Command::Sweep(a) => commands::sweep(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

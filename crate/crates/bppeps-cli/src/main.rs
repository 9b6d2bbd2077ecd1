//! `bppeps`: generate injective PEPS, contract them with belief propagation
//! plus cluster corrections, and run locality experiments.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bppeps::Error;

#[derive(Parser, Debug)]
#[command(name = "bppeps", version, about = "Belief-propagation contraction of injective PEPS")]
struct Cli {
    /// Worker threads for the engines (default: all cores).
    #[arg(long, global = true, env = "BPPEPS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random δ-injective network.
    Generate(GenerateArgs),
    /// Converge BP and compute the cluster-corrected free energy.
    Contract(ContractArgs),
    /// Cluster-corrected expectation value of a local operator.
    Observe(ObserveArgs),
    /// Connected two-point correlator.
    Correlate(CorrelateArgs),
    /// Local perturbation: lightcone, decay envelope, incremental update.
    Perturb(PerturbArgs),
    /// Sweep ε over an ensemble: convergence, loop decay, accuracy.
    Scan(ScanArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GraphArgs {
    /// `grid:RxC[:periodic]`, `complete:n`, `cycle:n`, `random-regular:n:d:seed`.
    #[arg(long, conflicts_with = "graph_file")]
    pub graph: Option<String>,
    /// JSON `{"vertices": N, "edges": [[u, v], ...]}`.
    #[arg(long)]
    pub graph_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long, short = 'D', default_value_t = 2)]
    pub bond_dim: usize,
    /// Physical dimension (default `D^Δ`).
    #[arg(long)]
    pub phys_dim: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BpArgs {
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ContractArgs {
    #[arg(long, short)]
    pub network: PathBuf,
    /// Cluster truncation order `m`.
    #[arg(long, short, default_value_t = 6)]
    pub order: usize,
    #[command(flatten)]
    pub bp: BpArgs,
    /// Also contract exactly and report the achieved error.
    #[arg(long)]
    pub oracle: bool,
    /// Slack constant in loop-decay checks.
    #[arg(long, default_value_t = 2.0)]
    pub slack: f64,
    #[arg(long, short = 'O')]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ObserveArgs {
    #[arg(long, short)]
    pub network: PathBuf,
    /// Operator sites (repeat, paired with `--operator`).
    #[arg(long = "site", required = true)]
    pub sites: Vec<usize>,
    /// `identity`, `random-hermitian:SEED`, or a matrix JSON file.
    #[arg(long = "operator", required = true)]
    pub operators: Vec<String>,
    #[arg(long, short, default_value_t = 6)]
    pub order: usize,
    #[command(flatten)]
    pub bp: BpArgs,
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, short = 'O')]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CorrelateArgs {
    #[arg(long, short)]
    pub network: PathBuf,
    #[arg(long)]
    pub site_a: usize,
    #[arg(long)]
    pub op_a: String,
    #[arg(long)]
    pub site_b: usize,
    #[arg(long)]
    pub op_b: String,
    #[arg(long, short, default_value_t = 6)]
    pub order: usize,
    #[command(flatten)]
    pub bp: BpArgs,
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, short = 'O')]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PerturbArgs {
    #[arg(long, short)]
    pub network: PathBuf,
    /// Perturbed vertices (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub region: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub strength: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observable site `B` for the incremental update.
    #[arg(long)]
    pub site_b: usize,
    #[arg(long, default_value = "random-hermitian:0")]
    pub op_b: String,
    /// Recompute radius (default `ceil(d(A,B)/2)`).
    #[arg(long)]
    pub r_th: Option<usize>,
    #[arg(long, short, default_value_t = 6)]
    pub order: usize,
    #[arg(long, default_value_t = 1e-13)]
    pub tol: f64,
    /// Skip the cached base run and only recompute from scratch.
    #[arg(long)]
    pub from_scratch: bool,
    /// Write the per-distance trace as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, short = 'O')]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ScanArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long, short = 'D', default_value_t = 2)]
    pub bond_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.03,0.05,0.1,0.15,0.2,0.25")]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value_t = 6)]
    pub order: usize,
    #[command(flatten)]
    pub bp: BpArgs,
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, short = 'O')]
    pub output: Option<PathBuf>,
}

/// Exit status for a library error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invalid(_)
        | Error::DimensionMismatch(_)
        | Error::Infeasible(_)
        | Error::UrsellTooLarge(_)
        | Error::Json(_)
        | Error::Io(_) => 2,
        Error::NoConvergence { .. }
        | Error::VanishingTrace { .. }
        | Error::IllConditioned(_)
        | Error::ProjectorOverlap(_) => 3,
        Error::StabilityGuard(_) => 4,
        Error::OracleBudget(_) => 5,
        Error::NoCertificate { .. } | Error::BpGuard(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Contract(a) => commands::contract(a),
        Command::Observe(a) => commands::observe(a),
        Command::Correlate(a) => commands::correlate(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::Scan(a) => commands::scan(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

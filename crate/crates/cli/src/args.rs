use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "flag", version, about = "Fit latent-factor plus Ising-graph models to binary response data")]
#[command(args_override_self = true, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Fit one (gamma, rho) point by ADMM
    Fit(FitArgs),
    /// Scan a (gamma, rho) grid, refit each structure and pick the BIC minimizer
    Select(SelectArgs),
    /// Simulate a dataset from a built-in or custom design
    Simulate(SimulateArgs),
    /// Parametric-bootstrap goodness of fit of a saved model
    Gof(GofArgs),
    /// Loadings, varimax rotation, factor scores, scale correlations and cliques
    Interpret(InterpretArgs),
    /// Replicated simulation study
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Flat key=value file; keys are long flag names, command-line flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Exit with status 3 when a solver fails to converge
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args, Serialize, Clone, Copy)]
pub struct SolverArgs {
    /// ADMM proximal scale
    #[arg(long, default_value_t = 50.0)]
    pub lambda: f64,
    /// Absolute stopping tolerance
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Relative stopping tolerance
    #[arg(long, default_value_t = 1e-5)]
    pub tol_rel: f64,
    /// ADMM iteration cap
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Response CSV (0/1, optional header)
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    /// delta = rho * gamma
    #[arg(long, default_value_t = 15.0)]
    pub rho: f64,
    /// Write a per-iteration convergence trace CSV here
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// lo:hi:n (n points in (lo, hi]) or a comma list
    #[arg(long, default_value = "0:0.02:20")]
    pub gamma_grid: String,
    #[arg(long, default_value = "10:20:20")]
    pub rho_grid: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Built-in design 1, 2 or 3
    #[arg(long, conflicts_with = "design")]
    pub setting: Option<u8>,
    /// Custom design JSON with "A" and "S" as nested arrays
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Number of subjects
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interaction on every edge of a built-in design
    #[arg(long, default_value_t = 1.0)]
    pub edge_strength: f64,
    /// Loading magnitude of a built-in design
    #[arg(long)]
    pub loading: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct GofArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model JSON written by fit or select
    #[arg(long)]
    pub model: PathBuf,
    /// Bootstrap replicates
    #[arg(long, default_value_t = 200)]
    pub boot: usize,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct InterpretArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Scale key CSV: item_index (1-based), scale_label, reverse_flag
    #[arg(long)]
    pub scales: Option<PathBuf>,
    /// Skip Kaiser row normalization before varimax
    #[arg(long)]
    pub no_kaiser: bool,
    /// Smallest clique to report
    #[arg(long, default_value_t = 3)]
    pub min_clique: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Comma list of built-in settings
    #[arg(long, default_value = "1")]
    pub settings: String,
    /// Comma list of sample sizes
    #[arg(long, default_value = "250,2000")]
    pub ns: String,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid of gamma * sqrt(N): lo:hi:n or a comma list
    #[arg(long, default_value = "0:2.5:10")]
    pub gamma_grid: String,
    #[arg(long, default_value = "4,12")]
    pub rho_grid: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub common: Common,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Fit(a) => &a.common,
            Command::Select(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Gof(a) => &a.common,
            Command::Interpret(a) => &a.common,
            Command::Eval(a) => &a.common,
        }
    }
}

/// Long flags that take no value; a config file sets them with `true`/`false`.
pub const SWITCHES: &[&str] = &["strict", "no-kaiser"];

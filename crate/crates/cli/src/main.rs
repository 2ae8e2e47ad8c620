//! `nonresp`: estimation of item-nonresponse logits with missing interviewer
//! and respondent covariates.
//!
//! Exit status: 0 on success, 1 on invalid input or configuration, 2 when
//! estimation fails. Every output is computed before anything is written,
//! so a failing run leaves the output directory untouched.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nonresp_core::averaging::MaOrder;
use nonresp_core::pipeline::Method;
use nonresp_core::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "nonresp", version, about = "Logit models for survey item nonresponse with missing covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic survey with known truth and MAR missingness.
    Simulate(SimulateArgs),
    /// Multiply impute the missing covariates.
    Impute(ImputeArgs),
    /// Estimate the focus coefficient and AME with one or more methods.
    Fit(FitArgs),
    /// Block model averaging with per-submodel diagnostics.
    Average(AverageArgs),
    /// Country-by-outcome table of focus AMEs for one method.
    Ame(AmeArgs),
    /// Monte Carlo bias and coverage study.
    Montecarlo(MonteCarloArgs),
    /// Response rates, interviewer participation, expectation histogram.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory; created if absent, files inside are overwritten.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Respondent-level CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema TOML declaring column kinds, roles, groups and hot-deck matching.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaOrderArg {
    PoolFirst,
    AverageFirst,
}

impl From<MaOrderArg> for MaOrder {
    fn from(v: MaOrderArg) -> Self {
        match v {
            MaOrderArg::PoolFirst => MaOrder::PoolFirst,
            MaOrderArg::AverageFirst => MaOrder::AverageFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Cca,
    FiMi,
    BbmaBic,
    BbmaAic,
}

impl From<MethodArg> for Method {
    fn from(v: MethodArg) -> Self {
        match v {
            MethodArg::Cca => Method::Cca,
            MethodArg::FiMi => Method::FiMi,
            MethodArg::BbmaBic => Method::BbmaBic,
            MethodArg::BbmaAic => Method::BbmaAic,
        }
    }
}

#[derive(Debug, Args)]
struct ImputationArgs {
    /// Number of imputations.
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Base seed; required whenever imputation or a Monte Carlo study runs.
    #[arg(long)]
    seed: Option<u64>,
    /// FCS sweeps per imputation.
    #[arg(long, default_value_t = nonresp_core::impute::DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Restrict hot-deck donors to the k matched donors closest on the
    /// cluster mean of the analysed outcome.
    #[arg(long)]
    donor_neighbours: Option<usize>,
}

#[derive(Debug, Args)]
struct EstimationArgs {
    #[command(flatten)]
    imputation: ImputationArgs,
    /// Estimate separately within each country.
    #[arg(long)]
    by_country: bool,
    /// Interviewer-clustered sandwich standard errors.
    #[arg(long)]
    cluster_se: bool,
    /// Combination order of imputations and submodels.
    #[arg(long, value_enum, default_value_t = MaOrderArg::PoolFirst)]
    ma_order: MaOrderArg,
    /// Outcome(s) to analyse; all schema outcomes when omitted.
    #[arg(long = "outcome")]
    outcomes: Vec<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Simulation config TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    imputation: ImputationArgs,
    /// Outcome used as imputation predictor and donor-matching key.
    #[arg(long)]
    outcome: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Estimation method(s); repeatable.
    #[arg(long = "method", value_enum, required = true)]
    methods: Vec<MethodArg>,
    #[command(flatten)]
    estimation: EstimationArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct AverageArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    estimation: EstimationArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct AmeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    estimation: EstimationArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct MonteCarloArgs {
    /// Simulation config TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    replications: usize,
    /// Methods to run; all four when omitted.
    #[arg(long = "method", value_enum)]
    methods: Vec<MethodArg>,
    #[command(flatten)]
    imputation: ImputationArgs,
    #[arg(long)]
    cluster_se: bool,
    #[arg(long, value_enum, default_value_t = MaOrderArg::PoolFirst)]
    ma_order: MaOrderArg,
    /// Nominal interval coverage.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Interviewer-level column whose observation marks survey participation;
    /// the focus column when omitted.
    #[arg(long)]
    participation: Option<String>,
    /// Interviewer-level 0-100 expectation column for the histogram.
    #[arg(long)]
    expectation: Option<String>,
    #[arg(long, default_value_t = 5.0)]
    bin_width: f64,
    #[command(flatten)]
    out: OutArgs,
}

fn exit_code(err: &Error) -> u8 {
    match err.class() {
        ErrorClass::Validation => 1,
        ErrorClass::Estimation => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `whatif`: operator tooling for the freight-rate what-if engine.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use whatif_core::eval::Metric;
use whatif_core::spatial::StatusFilter;
use whatif_core::ModelKind;

#[derive(Parser)]
#[command(name = "whatif", version, about = "Fit, backtest and query freight-rate what-if models")]
pub struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate synthetic market data or vessel tracks.
    GenData(GenData),
    /// Fit one model family and write it as JSON.
    Fit(FitArgs),
    /// Walk-forward backtest of one or more model families.
    Backtest(BacktestArgs),
    /// Run a scenario against saved models or a running service.
    Whatif(WhatifArgs),
    /// List vessels in view and the weekly approaching-ballast counts.
    Vessels(VesselArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Check a data, vessel, scenario, model or config file.
    Validate(ValidateArgs),
}

#[derive(Args)]
pub struct GenData {
    #[command(subcommand)]
    pub kind: GenKind,
}

#[derive(Subcommand)]
pub enum GenKind {
    /// Target linear in AR(1) drivers (brazil_loadings, iron_ore_price).
    Market {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 260)]
        weeks: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
    /// Cointegrated pair (freight_index, bunker_price) from a rank-one VECM.
    Cointegrated {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        weeks: usize,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-0.2,0.1")]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "1,-1")]
        beta: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Univariate AR(1) freight_index.
    Ar1 {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        weeks: usize,
        #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
        phi: f64,
    },
    /// Straight vessel tracks around a port, in the vessel CSV format.
    Vessels {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        weeks: usize,
        #[command(flatten)]
        port: PortArgs,
        #[arg(long, default_value_t = 6)]
        approaching_ballast: usize,
        #[arg(long, default_value_t = 4)]
        approaching_laden: usize,
        #[arg(long, default_value_t = 3)]
        departing_ballast: usize,
    },
}

#[derive(Args, Clone)]
pub struct PortArgs {
    #[arg(long, default_value = "Tubarao")]
    pub port_name: String,
    #[arg(long, default_value_t = -20.29, allow_negative_numbers = true)]
    pub port_lat: f64,
    #[arg(long, default_value_t = -40.24, allow_negative_numbers = true)]
    pub port_lon: f64,
    #[arg(long, default_value_t = 40.0)]
    pub port_radius_km: f64,
}

#[derive(Args)]
pub struct SpecArgs {
    /// Weekly CSV with a `date` column.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "freight_index")]
    pub target: String,
    /// Exogenous variables; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub exog: Option<Vec<String>>,
    /// Family hyperparameters as JSON, e.g. '{"p":1,"d":0,"q":0}'.
    #[arg(long)]
    pub hyperparams: Option<String>,
    /// Overrides the LSTM initialisation seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KindArg {
    Mlr,
    Arimax,
    Vecm,
    Lstm,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Mlr => ModelKind::Mlr,
            KindArg::Arimax => ModelKind::Arimax,
            KindArg::Vecm => ModelKind::Vecm,
            KindArg::Lstm => ModelKind::Lstm,
        }
    }
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: KindArg,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Rmse,
    Mae,
    Mape,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Rmse => Metric::Rmse,
            MetricArg::Mae => Metric::Mae,
            MetricArg::Mape => Metric::Mape,
        }
    }
}

#[derive(Args)]
pub struct BacktestArgs {
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub model: Vec<KindArg>,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[arg(long, value_enum, default_value = "rmse")]
    pub metric: MetricArg,
}

#[derive(Args)]
pub struct WhatifArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Saved model (repeat for several families). Runs locally.
    #[arg(long = "model-file", conflicts_with = "server", requires = "data")]
    pub model_files: Vec<PathBuf>,
    /// Frame the models forecast from, for local runs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Append the run to this NDJSON history log (local runs).
    #[arg(long, conflicts_with = "server")]
    pub history: Option<PathBuf>,
    /// Base URL of a running service.
    #[arg(long, requires = "route")]
    pub server: Option<String>,
    #[arg(long)]
    pub route: Option<String>,
}

#[derive(Args)]
pub struct VesselArgs {
    /// Vessel CSV, for local queries.
    #[arg(long, conflicts_with = "server")]
    pub file: Option<PathBuf>,
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long)]
    pub route: Option<String>,
    /// `lat_min,lon_min,lat_max,lon_max`
    #[arg(long, allow_hyphen_values = true)]
    pub bbox: Option<String>,
    #[arg(long, value_enum, default_value = "all")]
    pub status: StatusArg,
    /// Latest position at or before this ISO-8601 time.
    #[arg(long)]
    pub at: Option<String>,
    /// Aggregate local records against this port.
    #[arg(long)]
    pub supply: bool,
    #[command(flatten)]
    pub port: PortArgs,
    #[arg(long, default_value_t = 45.0)]
    pub tolerance_deg: f64,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StatusArg {
    Ballast,
    Laden,
    All,
}

impl From<StatusArg> for StatusFilter {
    fn from(s: StatusArg) -> Self {
        match s {
            StatusArg::Ballast => StatusFilter::Ballast,
            StatusArg::Laden => StatusFilter::Laden,
            StatusArg::All => StatusFilter::All,
        }
    }
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileKind {
    Frame,
    Vessels,
    Scenario,
    Model,
    Config,
}

#[derive(Args)]
pub struct ValidateArgs {
    pub file: PathBuf,
    /// File type; guessed from the extension and header when omitted.
    #[arg(long, value_enum)]
    pub kind: Option<FileKind>,
}

/// Failure classes mapped to exit codes: usage problems exit 2, bad data or
/// model failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bike-sharing station occupancy forecasting.
#[derive(Debug, Parser)]
#[command(name = "occ-forecast", version, about)]
pub struct Cli {
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append station feed CSV files to a snapshot store.
    Ingest(IngestArgs),
    /// Check every store partition.
    Verify(VerifyArgs),
    /// Generate a synthetic corpus from a scenario file.
    Synth(SynthArgs),
    /// Feature-row utilities.
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
    /// Train one station model at a build time.
    Train(TrainArgs),
    /// Predict the horizon after a model's build time.
    Predict(PredictArgs),
    /// Gini importance report for one station.
    Importance(ImportanceArgs),
    /// Run the daily build-and-predict protocol and score it.
    Evaluate(EvaluateArgs),
    /// Score an existing prediction file.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCommand {
    /// Write the labeled feature rows of a window.
    Dump(FeaturesDumpArgs),
}

/// Where the corpus lives. Unset paths default to the layout written by
/// `synth` under `--data`.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Flat `key = value` run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory holding `store/`, `weather.csv` and `holidays.txt`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub weather: Option<PathBuf>,
    #[arg(long)]
    pub holidays: Option<PathBuf>,
    /// City clock as a fixed UTC offset, e.g. `+01:00`.
    #[arg(long)]
    pub utc_offset: Option<String>,
    /// `strict` or `lenient` parsing of weather input.
    #[arg(long)]
    pub parse_mode: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long)]
    pub min_node_size: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Rows drawn from the year-ago window.
    #[arg(long)]
    pub n_yearago: Option<usize>,
    /// Rows drawn from the recent window.
    #[arg(long)]
    pub n_recent: Option<usize>,
    /// Largest non-seasonal AR and MA order in the ARIMA grid.
    #[arg(long)]
    pub arima_max_order: Option<usize>,
    /// Leave seasonal terms out of the ARIMA grid.
    #[arg(long)]
    pub arima_no_seasonal: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Store directory; created when missing.
    #[arg(long)]
    pub store: PathBuf,
    /// Station feed CSV files.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "lenient")]
    pub parse_mode: String,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesDumpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub station: u32,
    /// Window start, RFC 3339 or a local date.
    #[arg(long)]
    pub from: String,
    /// Window end (exclusive), RFC 3339 or a local date.
    #[arg(long)]
    pub to: String,
    /// `rf` or `rf_extended`.
    #[arg(long, default_value = "rf_extended")]
    pub set: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub station: u32,
    /// Build time, RFC 3339 or a local date (its midnight).
    #[arg(long)]
    pub at: String,
    /// `arima`, `rf` or `rf_extended`.
    #[arg(long, default_value = "rf")]
    pub method: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Forest model written by `train`.
    #[arg(long, conflicts_with_all = ["station", "at"])]
    pub model: Option<PathBuf>,
    /// Fit and forecast an ARIMA baseline for this station instead.
    #[arg(long, requires = "at")]
    pub station: Option<u32>,
    #[arg(long)]
    pub at: Option<String>,
    #[arg(long, default_value_t = 72)]
    pub horizon_hours: i64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub station: u32,
    #[arg(long)]
    pub at: String,
    /// `sample` trains on the sampler windows, `year` on every row of the
    /// 52 weeks before the build time.
    #[arg(long, default_value = "sample")]
    pub window: String,
    #[arg(long, default_value = "rf_extended")]
    pub set: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// First build day (local date).
    #[arg(long)]
    pub from: Option<String>,
    /// Last build day, inclusive.
    #[arg(long)]
    pub to: Option<String>,
    /// Comma-separated station ids; defaults to every station in the store.
    #[arg(long)]
    pub stations: Option<String>,
    /// Comma-separated subset of `arima,rf,rf_extended`.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon_hours: Option<i64>,
    /// Count a warning on the wrong side as a hit under the flexible criterion.
    #[arg(long)]
    pub flexible_any_side: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Prediction CSV written by `evaluate` or `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub flexible_any_side: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OCC_FORECAST_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

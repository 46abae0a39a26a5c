//! `cgmcast`: synthesize, preprocess, pre-train, fine-tune, evaluate and
//! sweep CGM glucose forecasters from the command line.
//!
//! Exit codes: 0 success, 2 bad input or flags, 3 numeric failure,
//! 4 configuration, checkpoint or path error, 1 internal error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cgm_forecast::Error;

#[derive(Parser)]
#[command(
    name = "cgmcast",
    version,
    about = "Blood glucose forecasting with a pre-trained LSTM/Bi-LSTM network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort, one CSV per subject.
    Synth(SynthArgs),
    /// Repair, split and partition raw CSVs into fine-tune datasets and a pre-train pool.
    Preprocess(PreprocessArgs),
    /// Two-round pre-training: simulated pool, then short real sub-datasets.
    Pretrain(PretrainArgs),
    /// Fine-tune a global checkpoint on every dataset.
    Finetune(FinetuneArgs),
    /// Score fine-tuned checkpoints and baselines; writes report.csv and SVG plots.
    Eval(EvalArgs),
    /// Score baselines only.
    Baseline(BaselineArgs),
    /// Pre-train epoch sweep with min-RMSE selection.
    Sweep(SweepArgs),
    /// Full pipeline across several horizons: pretrain, finetune, eval.
    Compare(CompareArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Number of virtual subjects.
    #[arg(long, default_value_t = 11)]
    subjects: usize,
    /// Days per subject (288 samples per day).
    #[arg(long, default_value_t = 38)]
    days: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PreprocessArgs {
    /// Directory of `timestamp,glucose_mgdl` CSVs.
    #[arg(long = "in")]
    input: PathBuf,
    /// Minimum sub-dataset length kept for fine-tuning; shorter runs go to the pool.
    #[arg(long, default_value_t = cgm_forecast::pipeline::MIN_SUBDATASET_LEN)]
    min_len: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct ModelArgs {
    /// Seed for initialisation and batch shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input window length L in samples.
    #[arg(long, default_value_t = 12)]
    window_len: usize,
}

#[derive(Args, Serialize)]
struct PretrainArgs {
    /// Simulated data: a directory of series CSVs, a series CSV or a pool CSV.
    #[arg(long)]
    sim: PathBuf,
    /// Short real sub-datasets: a pool CSV, a series CSV or a directory.
    #[arg(long)]
    real: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Prediction horizon in minutes (multiple of 5).
    #[arg(long, default_value_t = 30)]
    ph: u32,
    /// Round-1 epochs; also round 2 unless --epochs-r2 is given.
    #[arg(long, default_value_t = 1300)]
    epochs: usize,
    /// Round-2 epochs; 0 skips round 2 [default: same as --epochs].
    #[arg(long)]
    epochs_r2: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FinetuneArgs {
    /// Global checkpoint JSON.
    #[arg(long)]
    checkpoint: PathBuf,
    /// A dataset CSV or a directory of them.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Prediction horizon in minutes; must match the checkpoint.
    #[arg(long, default_value_t = 30)]
    ph: u32,
    /// Fine-tune epochs.
    #[arg(long, default_value_t = cgm_forecast::training::FINETUNE_EPOCHS)]
    epochs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Lstm,
    Naive,
    Arima,
    Svr,
}

#[derive(Args, Serialize, Clone)]
struct BaselineOptions {
    /// ARI autoregressive order p.
    #[arg(long, default_value_t = 3)]
    arima_p: usize,
    /// ARI differencing order d (0 or 1).
    #[arg(long, default_value_t = 1)]
    arima_d: usize,
    /// SVR epsilon-tube half width (scaled units).
    #[arg(long, default_value_t = 0.01)]
    svr_epsilon: f64,
    /// SVR regularisation constant C.
    #[arg(long, default_value_t = 1.0)]
    svr_c: f64,
    /// SVR subgradient epochs.
    #[arg(long, default_value_t = 200)]
    svr_epochs: usize,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Directory holding `<dataset>_ph<PH>.json` fine-tuned checkpoints.
    #[arg(long)]
    checkpoints: PathBuf,
    /// A dataset CSV or a directory of them.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Prediction horizons in minutes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "30")]
    ph: Vec<u32>,
    /// Methods to score, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "lstm,naive,arima,svr")]
    methods: Vec<Method>,
    #[command(flatten)]
    #[serde(flatten)]
    baselines: BaselineOptions,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BaselineArgs {
    /// A dataset CSV or a directory of them.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Prediction horizons in minutes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "30")]
    ph: Vec<u32>,
    /// Baselines to score, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "naive,arima,svr")]
    methods: Vec<Method>,
    #[command(flatten)]
    #[serde(flatten)]
    baselines: BaselineOptions,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// Simulated data: a directory of series CSVs, a series CSV or a pool CSV.
    #[arg(long)]
    sim: PathBuf,
    /// Short real sub-datasets: a pool CSV, a series CSV or a directory.
    #[arg(long)]
    real: PathBuf,
    /// Fine-tune datasets: a CSV or a directory of them.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Prediction horizon in minutes.
    #[arg(long, default_value_t = 30)]
    ph: u32,
    /// First pre-train epoch count.
    #[arg(long, default_value_t = 100)]
    from: usize,
    /// Last pre-train epoch count (inclusive).
    #[arg(long, default_value_t = 2000)]
    to: usize,
    /// Step between epoch counts.
    #[arg(long, default_value_t = 100)]
    step: usize,
    /// Fine-tune epochs per row.
    #[arg(long, default_value_t = cgm_forecast::training::FINETUNE_EPOCHS)]
    epochs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    /// Simulated data: a directory of series CSVs, a series CSV or a pool CSV.
    #[arg(long)]
    sim: PathBuf,
    /// Short real sub-datasets: a pool CSV, a series CSV or a directory.
    #[arg(long)]
    real: PathBuf,
    /// Fine-tune datasets: a CSV or a directory of them.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Prediction horizons in minutes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "15,30,45,60")]
    ph: Vec<u32>,
    /// Pre-train epochs for both rounds.
    #[arg(long, default_value_t = 1300)]
    pretrain_epochs: usize,
    /// Fine-tune epochs.
    #[arg(long, default_value_t = cgm_forecast::training::FINETUNE_EPOCHS)]
    epochs: usize,
    /// Methods to score, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "lstm,naive,arima,svr")]
    methods: Vec<Method>,
    #[command(flatten)]
    #[serde(flatten)]
    baselines: BaselineOptions,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Input(_) | Error::Parse { .. } | Error::Shape(_) | Error::Metric(_) | Error::Fit(_) => 2,
            Error::Numeric(_) => 3,
            Error::Config(_) | Error::Format(_) | Error::Load { .. } | Error::Io { .. } => 4,
            Error::Internal(_) => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Compare(a) => commands::compare(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cgmcast: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

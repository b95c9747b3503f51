//! `simmiss` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 strategy error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "simmiss", version, about = "Missingness-aware analysis of simulation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the study data comes from: a bundle directory written by `ingest`
/// or `run`, or explicit files.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Directory holding design.csv, truths.csv and records.csv.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long)]
    truths: Option<PathBuf>,
    /// Column mapping (JSON); canonical columns when absent.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Overrides the nominal alpha of every condition.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// markdown, csv or json.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct MeasureArgs {
    /// Comma-separated measures, e.g. bias,coverage,rejection_rate.
    #[arg(long)]
    measures: String,
    /// Non-analysis threshold: cells whose valid rate is below this are not
    /// analyzed (default 0.15).
    #[arg(long)]
    threshold: Option<f64>,
    /// Trimming proportion of trimmed_bias.
    #[arg(long, default_value_t = 0.2)]
    trim: f64,
    /// Parameter-space bounds for worst-case imputation.
    #[arg(long, allow_negative_numbers = true)]
    parameter_lower: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    parameter_upper: Option<f64>,
    /// Null value for worst-case imputation of rejections.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    null_value: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate raw records against a design and write a canonical bundle.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Bundle directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Missingness tables.
    Report {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Performance estimates under one handling strategy.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        measures: MeasureArgs,
        /// case_wise, list_wise, raw, replacement:RE,PET or imputation:KIND.
        #[arg(long, conflicts_with = "strategy_config")]
        strategy: Option<String>,
        /// Strategy block as JSON.
        #[arg(long)]
        strategy_config: Option<PathBuf>,
    },
    /// The same measures under several strategies side by side.
    Sensitivity {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        measures: MeasureArgs,
        /// Repeat for each strategy to compare.
        #[arg(long = "strategy", required = true)]
        strategies: Vec<String>,
    },
    /// Logistic meta-model of missingness on methods and design factors.
    Metamodel {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// any_missing, dgm_missing, method_missing, performance_missing or
        /// class:NAME.
        #[arg(long, default_value = "any_missing")]
        outcome: String,
        /// Comma-separated terms: method, factor names, a:b interactions.
        /// Defaults to method plus every factor.
        #[arg(long)]
        terms: Option<String>,
    },
    /// Execute a configured demo study and write a bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u64>,
        /// Bundle directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot data (CSV) and optional SVG renderings.
    Plotdata {
        #[command(flatten)]
        data: DataArgs,
        /// beeswarm, marginal or strategy_comparison.
        #[arg(long)]
        kind: String,
        /// Directory to write into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
        /// Mean missing rate above which a marginal summary is highlighted.
        #[arg(long, default_value_t = 0.001)]
        highlight_threshold: f64,
        /// Strategies for strategy_comparison.
        #[arg(long = "strategy")]
        strategies: Vec<String>,
        /// Measures for strategy_comparison.
        #[arg(long)]
        measures: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

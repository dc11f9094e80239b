mod analyze;
mod commands;
mod config;
mod failure;
mod run;
mod store;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use analyze::{AnalyzeCmd, HeatmapArgs};
use commands::{EvalArgs, SynthArgs, TrainArgs};

/// Relation extraction over entity-pair matrices, with corpus statistics on
/// how relations depend on each other.
///
/// Set ROR_LOG (error, warn, info, debug, trace) to control logging.
#[derive(Parser, Debug)]
#[command(name = "ror", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Train a model (single, ensemble or two-stage) and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a gold corpus.
    Eval(EvalArgs),
    /// Write predicted relations as corpus JSONL.
    Predict(EvalArgs),
    /// Corpus statistics and metrics.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Render a matrix report as CSV and SVG.
    ExportHeatmap(HeatmapArgs),
}

/// `--config` of the invoked subcommand, for the log-level default.
fn config_path(cmd: &Command) -> Option<&std::path::Path> {
    match cmd {
        Command::Synth(a) => a.config.as_deref(),
        Command::Train(a) => a.common.config.as_deref(),
        Command::Eval(a) | Command::Predict(a) => a.common.config.as_deref(),
        Command::ExportHeatmap(a) => a.common.config.as_deref(),
        Command::Analyze(_) => None,
    }
}

fn init_logging(cmd: &Command) {
    // a broken config is reported by the command itself
    let level = config_path(cmd)
        .and_then(|p| config::load(Some(p), None).ok())
        .map(|c| c.log_level)
        .unwrap_or_else(|| "info".into());
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROR_LOG", level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(&cli.cmd);
    let result = match &cli.cmd {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Analyze(a) => analyze::analyze(a),
        Command::ExportHeatmap(a) => analyze::export_heatmap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ror: {f}");
            ExitCode::from(f.code())
        }
    }
}

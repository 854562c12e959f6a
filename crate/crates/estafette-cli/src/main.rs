//! Command-line surface binding the translation engine into reproducible
//! workflows. Exit codes: 0 success, 1 user/configuration error, 2
//! internal error.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "estafette",
    version,
    about = "Simultaneous multi-pivot machine translation: corpora, training, wait-k decoding, pivot pipelines, evaluation",
    after_help = "Flags override config-file values; config files override built-in defaults.\n\
                  ESTAFETTE_OUT_DIR sets the default output directory."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic N-way corpus from a spec file
    GenCorpus(commands::gen_corpus::Args),
    /// Train one translation model on an N-way corpus
    Train(commands::train::Args),
    /// Translate stdin with a single model (full-sentence or wait-k)
    Translate(commands::translate::Args),
    /// Translate stdin through a pivot pipeline
    PipelineTranslate(commands::pipeline_translate::Args),
    /// Score hypotheses against references with corpus BLEU
    Evaluate(commands::evaluate::Args),
    /// Evaluate the wait-k grid over pivot configurations
    Grid(commands::grid::Args),
    /// Render a grid CSV as a markdown report
    Report(commands::report::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenCorpus(args) => commands::gen_corpus::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Translate(args) => commands::translate::run(args),
        Command::PipelineTranslate(args) => commands::pipeline_translate::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Grid(args) => commands::grid::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// 1 for user/configuration problems, 2 for internal failures.
fn classify(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<estafette::Error>() {
        return match e {
            estafette::Error::NonFiniteLoss { .. } => 2,
            _ => 1,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<estafette::Error>().is_some()
        {
            return 1;
        }
    }
    2
}

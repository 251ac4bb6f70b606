//! `ccrec`: reproducible experiment pipelines for the cross-channel
//! recommender.
//!
//! Every command writes a `manifest.json` into its output directory before
//! the heavy work starts; `ccrec replay <manifest>` re-runs it.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        // usage errors exit with 2, --help / --version with 0
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CCREC_LOG", "info"))
        .format_timestamp(None)
        .init();

    match commands::run(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

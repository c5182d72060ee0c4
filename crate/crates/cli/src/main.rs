//! `nytune`: optimization runs, grid landscapes and stochastic-trace studies
//! for Nystrom KRR, each leaving a manifest that can be replayed.

mod args;
mod commands;
mod error;
mod manifest;
mod source;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::error::EXIT_USAGE;

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("NYTUNE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("NYTUNE_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("NYTUNE_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("nytune: {msg}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nytune: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

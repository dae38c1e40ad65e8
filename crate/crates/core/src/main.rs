use std::process::ExitCode;

use clap::Parser;
use seqpl::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}

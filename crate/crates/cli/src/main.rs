use std::process::ExitCode;

use clap::Parser;
use gtp_cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("gtp: {e}");
            ExitCode::from(e.code)
        }
    }
}

use std::process::ExitCode;

use gtp_core::acceptance::{format_table, run_all};

fn main() -> ExitCode {
    let results = run_all();
    print!("{}", format_table(&results));
    if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

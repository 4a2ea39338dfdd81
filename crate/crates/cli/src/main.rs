use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = sellkit::cli::Cli::parse();
    match sellkit::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_broken_pipe() => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

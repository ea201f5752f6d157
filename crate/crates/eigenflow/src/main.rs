use std::process::ExitCode;

use clap::Parser;
use eigenflow::cli::{error_json, run, Cli};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli, args) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(Some(name), &e));
            ExitCode::FAILURE
        }
    }
}

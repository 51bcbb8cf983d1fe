mod cli;
mod commands;
mod config;
mod error;
mod ingest;
mod output;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Fit(a) => commands::fit_cmd(a),
        Command::Select(a) => commands::select_cmd(a),
        Command::Study(a) => commands::study_cmd(a),
        Command::Plotdata(a) => commands::plotdata_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lcga: {e}");
            e.exit_code()
        }
    }
}

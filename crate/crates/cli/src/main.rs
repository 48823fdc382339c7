use std::io::Write;

use clap::Parser;
use svpg_cli::app::{run, Cli};
use svpg_cli::CliError;

fn main() {
    match run(Cli::parse()) {
        Ok(lines) => {
            let mut out = std::io::stdout().lock();
            for l in lines {
                if writeln!(out, "{l}").is_err() {
                    break;
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if matches!(e, CliError::GradCheck(_)) { 2 } else { 1 });
        }
    }
}

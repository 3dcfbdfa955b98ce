use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use fpevtt::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).with_context(|| format!("{:?} failed", cli.command).to_lowercase());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<fpevtt::Error>().map_or(1, fpevtt::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

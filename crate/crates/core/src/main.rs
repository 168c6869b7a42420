use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use sparq::cli::{self, Cli};

fn run() -> anyhow::Result<i32> {
    let args = Cli::parse();
    let out = cli::dispatch(args).context("sparq")?;
    print!("{}", out.text);
    Ok(out.code)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<sparq::Error>()
                .map_or(cli::EXIT_CONFIG, cli::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

use std::process::ExitCode;

use clap::Parser;
use grasptransfer::{run, Cli};

/// Log filter, e.g. `GRASPTRANSFER_LOG=debug`.
const LOG_ENV: &str = "GRASPTRANSFER_LOG";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

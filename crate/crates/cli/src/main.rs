//! `memprobe` command-line front end.

mod commands;

use std::process::ExitCode;

use clap::Parser;
use memprobe_core::Error;

use crate::commands::Cli;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    if e.is_data_error() {
        EXIT_DATA
    } else {
        EXIT_CONFIG
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("MEMPROBE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("MEMPROBE_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| commands::dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memprobe: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

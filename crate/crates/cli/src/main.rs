mod args;
mod commands;
mod selftest;

use std::process::ExitCode;

use args::{Command, Failure};

/// Exit codes: 1 usage or configuration, 2 input/output, 3 numerical failure.
const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<commands::Usage>().is_some() {
        return EXIT_USAGE;
    }
    if e.downcast_ref::<selftest::ChecksFailed>().is_some() {
        return EXIT_NUMERICAL;
    }
    match e.downcast_ref::<turbdip::Error>() {
        Some(err) if err.is_numerical() => EXIT_NUMERICAL,
        Some(turbdip::Error::InvalidConfig(_)) => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("TURBDIP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("TURBDIP_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match args::parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(Failure::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(EXIT_USAGE);
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(EXIT_IO);
        }
    };
    if let Err(m) = configure_threads() {
        eprintln!("error: {m}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match &cli.command {
        Command::Restore(a) => commands::restore(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Selftest(a) => selftest::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

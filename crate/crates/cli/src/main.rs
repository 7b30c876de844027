//! `cavg`: estimate infinite-time averages of the Lorenz-1963 system from
//! weighted libraries of periodic orbits and chaotic snippets.
//!
//! Exit codes: 0 success, 1 usage error, 2 computation error. The first
//! stderr line of a failure is machine-parsable as `ERROR <code>: <msg>`.

mod commands;
mod config;
mod plot;

use clap::Parser;

fn main() {
    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                std::process::exit(0);
            }
            let first = e.to_string().lines().next().unwrap_or("bad usage").to_string();
            eprintln!("ERROR 1: {first}");
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = commands::run(cli) {
        eprintln!("ERROR 2: {e}");
        let mut src = e.source();
        while let Some(cause) = src {
            eprintln!("  caused by: {cause}");
            src = cause.source();
        }
        std::process::exit(2);
    }
}

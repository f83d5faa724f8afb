use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::Parser;
use log::LevelFilter;
use pidcp_cli::{exit_code, parse_config, run_command, write_artifacts, EXIT_VALIDATION};

/// Price two-asset American options under the Merton jump-diffusion model
/// and run convergence studies.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving the CSV output.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent sweep points.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new()
        .filter_level(if args.verbose { LevelFilter::Info } else { LevelFilter::Warn })
        .init();

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };

    let start = Instant::now();
    let result = run_command(&cfg, args.jobs)
        .with_context(|| format!("{} failed", cfg.command.name()))
        .and_then(|outcome| {
            let paths = write_artifacts(&outcome, &args.out).context("writing output")?;
            Ok((outcome, paths))
        });
    match result {
        Ok((outcome, paths)) => {
            for note in &outcome.notes {
                log::info!("{note}");
            }
            for p in paths {
                log::info!("wrote {}", p.display());
            }
            eprintln!(
                "{}: jump matvecs {}, wall time {:.3} s",
                cfg.command.name(),
                outcome.matvecs,
                start.elapsed().as_secs_f64()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

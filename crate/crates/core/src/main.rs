use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use lacerec::pipeline::{execute, load_config, Command, Outcome, RunOptions};
use lacerec::Error;

/// Solve and certify lace-expansion convolution recursions.
#[derive(Debug, Parser)]
#[command(name = "lacerec", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Root seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Report the smallest constants that make each check pass instead of failing.
    #[arg(long)]
    fit: bool,
}

const EXIT_CERTIFICATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut cfg = match load_config(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Err(e) = cfg.validate_for(cli.command) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    match execute(cli.command, &cfg, &cli.out, RunOptions { fit: cli.fit }) {
        Ok(summary) => {
            for note in &summary.notes {
                eprintln!("note: {note}");
            }
            for f in &summary.files {
                println!("{}  {}", f.sha256, cli.out.join(&f.name).display());
            }
            match summary.outcome {
                Outcome::Passed => ExitCode::SUCCESS,
                Outcome::CertificationFailed => {
                    eprintln!("certification failed; see {}", cli.out.display());
                    ExitCode::from(EXIT_CERTIFICATION)
                }
            }
        }
        Err(e @ (Error::InvalidParameter(_) | Error::Parse(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

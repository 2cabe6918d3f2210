use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nfpe::config::{ProbeName, RunConfig};

#[derive(Parser)]
#[command(name = "nfpe", about = "Degenerate nonlinear Fokker-Planck laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the probes described by a JSON config and write an artifact
    /// directory.
    Run {
        config: PathBuf,
        /// Output directory (default: ./out)
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the RNG seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Override the probe list (repeatable)
        #[arg(long = "probe")]
        probes: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, probes } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if !probes.is_empty() {
                let mut parsed = Vec::new();
                for name in &probes {
                    match ProbeName::parse(name) {
                        Ok(p) => parsed.push(p),
                        Err(e) => {
                            eprintln!("error: {e}");
                            return ExitCode::FAILURE;
                        }
                    }
                }
                cfg.probes = parsed;
            }
            match nfpe::run::run(&cfg, &out) {
                Ok(summary) => {
                    for c in &summary.checks {
                        let tag = if c.hard { "hard" } else { "info" };
                        let verdict = if c.passed { "pass" } else { "FAIL" };
                        println!("[{tag}] {verdict} {} (margin {:.3e})", c.name, c.margin);
                    }
                    println!(
                        "artifacts written to {} ({})",
                        out.display(),
                        if summary.all_hard_passed { "all hard checks passed" } else { "hard check failure" }
                    );
                    if summary.all_hard_passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}

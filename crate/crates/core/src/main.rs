use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use proxflow::cli::{load_config, output_dir, run_scenario, RunError, SCENARIOS};

#[derive(Parser)]
#[command(name = "proxflow", version, about = "Weighted point-cloud density propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the registered scenarios.
    ListScenarios,
    /// Check a configuration and print it with all defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn report(err: &RunError) -> ExitCode {
    let record = serde_json::json!({
        "code": err.code(),
        "step": err.step(),
        "message": err.to_string(),
    });
    eprintln!("{record}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListScenarios => {
            for s in SCENARIOS {
                println!("{:<14} {}", s.name, s.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                print!("{}", cfg.to_toml_string());
                ExitCode::SUCCESS
            }
            Err(e) => report(&e.into()),
        },
        Command::Run { config, seed, out } => {
            let mut cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(e) => return report(&e.into()),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = Some(o);
            }
            match run_scenario(&cfg) {
                Ok(summary) => {
                    println!(
                        "{}: {} steps, outputs in {}",
                        cfg.scenario,
                        summary.steps.len(),
                        output_dir(&cfg).display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e),
            }
        }
    }
}

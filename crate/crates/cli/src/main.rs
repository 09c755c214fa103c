use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use mfnuts_cli::{compare, load_config, run_experiment, runner, RunError};
use mfnuts_core::problems::by_name;

#[derive(Parser)]
#[command(name = "mfnuts", version, about = "Multi-fidelity surrogate-guided NUTS experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write samples, metrics and curves.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run several experiments on one problem and combine their mESS curves.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the surrogate for a config and save it without sampling.
    BuildSurrogate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let outcome = run_experiment(&cfg)?;
            for f in &outcome.files {
                println!("{}", f.display());
            }
        }
        Command::Compare { configs, out } => {
            let cfgs = configs.iter().map(|p| load_config(p)).collect::<Result<Vec<_>, _>>()?;
            compare(&cfgs, &out)?;
            println!("{}", out.display());
        }
        Command::BuildSurrogate { config } => {
            let cfg = load_config(&config)?;
            let problem = by_name(&cfg.problem)?;
            let s = runner::build_surrogate(&cfg, &problem)?;
            let path = cfg.surrogate.path.clone().unwrap_or_else(|| cfg.output_dir.join("surrogate.json"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            s.save(&path)?;
            println!(
                "{}: {:?} surrogate, test MSE {:.3e}, {} low / {} high evaluations",
                path.display(),
                s.variant(),
                s.validation_mse,
                s.eval_counts.low,
                s.eval_counts.high
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use gossipsim::config::ExperimentConfig;
use gossipsim::experiment::{run_experiment, ExperimentOptions};

/// Gossiping in the random phone call model on random graphs.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment config.
    Run {
        config: PathBuf,
        /// Worker threads (default: one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write plot_comparison.csv, plot_robustness.csv, plot_exceedance.csv.
        #[arg(long)]
        emit_plotdata: bool,
        /// Write per-run channel traces under DIR/traces.
        #[arg(long)]
        trace: bool,
        /// Record wall-clock time per run (outputs stop being reproducible).
        #[arg(long)]
        wallclock: bool,
    },
    /// Check a config and print it with every default resolved.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            print!("{}", cfg.echo());
        }
        Command::Run { config, jobs, out, emit_plotdata, trace, wallclock } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let opts = ExperimentOptions { jobs, out_dir: Some(out.clone()), emit_plotdata, trace, wallclock };
            let report = run_experiment(&cfg, &opts).context("experiment failed")?;
            let done = report.results.iter().filter(|r| r.row.completed).count();
            eprintln!(
                "{} runs ({} completed), {} groups written to {}",
                report.results.len(),
                done,
                report.summaries.len(),
                out.display()
            );
        }
    }
    Ok(())
}

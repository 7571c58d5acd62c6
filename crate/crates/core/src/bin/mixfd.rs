use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mixfd::cli::{cmd_fit, cmd_sweep, FitArgs, Outcome, SweepArgs};

/// Flow-density sweeps of mixed human/robot-vehicle traffic at unsignalized intersections.
#[derive(Parser)]
#[command(name = "mixfd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured sweep and write CSVs, the report and plots.
    Sweep {
        /// TOML config; defaults reproduce the full protocol.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory [default: out, or output.dir from the config]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        no_plots: bool,
        /// Comma-separated seeds replacing the configured ones.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
    },
    /// Refit an existing runs.csv.
    Fit {
        runs: PathBuf,
        /// Output directory [default: the directory of RUNS]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
}

fn finish(outcome: Outcome) -> ExitCode {
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    if outcome.faulted_runs > 0 {
        eprintln!("{} runs faulted; see faults.csv", outcome.faulted_runs);
    }
    for cell in outcome.empty_cells() {
        eprintln!(
            "every run of {} at penetration {} faulted",
            cell.intersection, cell.penetration
        );
    }
    ExitCode::from(outcome.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = match cli.command {
        Command::Sweep {
            config,
            out,
            jobs,
            no_plots,
            seed_override,
        } => cmd_sweep(&SweepArgs {
            config,
            out,
            jobs,
            no_plots,
            seed_override,
        }),
        Command::Fit { runs, out, no_plots } => cmd_fit(&FitArgs { runs, out, no_plots }),
    };
    match result {
        Ok(outcome) => {
            eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
            finish(outcome)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use airbreathe::harness::{plot_data_from_files, render_summary, run_experiment, sweep, ExperimentConfig, SweepGrid};
use airbreathe::{verify, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "airbreathe", version, about = "Spectrum-breathing over-the-air federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` on a dotted config path; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a config over a grid of SIR, device count and depth.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        sir_db: Vec<f64>,
        #[arg(long = "k", value_delimiter = ',')]
        num_devices: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        depth: Vec<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the oracle checks.
    Verify {
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Align telemetry CSVs on cumulative chips for plotting.
    Plotdata {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed, overrides } => {
            let mut cfg = ExperimentConfig::load(&config, &overrides)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let report = run_experiment(&cfg)?;
            print!("{}", render_summary(&report));
        }
        Command::Sweep {
            config,
            sir_db,
            num_devices,
            depth,
            out_dir,
            overrides,
        } => {
            let base = ExperimentConfig::load(&config, &overrides)?;
            let grid = SweepGrid { sir_db, num_devices, depth };
            std::fs::create_dir_all(&out_dir)?;
            for r in sweep(&base, &grid, Some(&out_dir))? {
                println!(
                    "{:<40} acc {:.4} loss {:.4}",
                    r.config.name,
                    r.summary.mean_final_accuracy(),
                    r.summary.mean_final_loss()
                );
            }
        }
        Command::Verify { only, seed } => {
            let mut all = true;
            for id in if only.is_empty() { verify::ALL.to_vec() } else { only } {
                let o = verify::run_one(id, seed)?;
                println!("{o}");
                all &= o.passed;
            }
            return Ok(all);
        }
        Command::Plotdata { inputs, out_dir } => {
            for p in plot_data_from_files(&inputs, &out_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

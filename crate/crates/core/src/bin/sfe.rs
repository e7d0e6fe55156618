//! Experiment CLI: simulate observations, sweep estimators over frequencies,
//! render field/error maps, optimize the multidirectional kernel, and ingest
//! measured impulse responses.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use sfe::cli::{run_ingest, run_map, run_optimize_md, run_simulate, run_sweep, RunContext};

#[derive(Parser)]
#[command(name = "sfe", about = "Sound field estimation experiments", version)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for independent cells (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated microphone snapshots and ground-truth fields.
    Simulate,
    /// Run the multi-method NMSE sweep (resumable per cell).
    Sweep {
        /// Comma-separated method ids to include.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Render field and error maps for one method at one frequency.
    Map {
        #[arg(long)]
        method: String,
        #[arg(long)]
        frequency: f64,
    },
    /// Optimize the multidirectional kernel at one frequency.
    OptimizeMd {
        #[arg(long)]
        frequency: f64,
    },
    /// Convert measured impulse responses to a pressure snapshot.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        frequency: f64,
        /// Output file (default: <out>/ingest_<freq>.csv).
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> sfe::Result<()> {
    let config_path = cli
        .config
        .ok_or_else(|| sfe::Error::validation("--config <path> is required"))?;
    let rc = RunContext::load(&config_path, cli.out, cli.seed)?;
    match cli.command {
        Command::Simulate => {
            let files = run_simulate(&rc)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Sweep { methods } => {
            let stats = run_sweep(&rc, methods.as_deref())?;
            println!(
                "wrote {} ({} rows; {} computed, {} cached, {} failed)",
                stats.sweep_path.display(),
                stats.rows,
                stats.computed_cells,
                stats.cached_cells,
                stats.failed_cells
            );
            if stats.failed_cells > 0 {
                return Err(sfe::Error::numeric(format!(
                    "{} sweep cell(s) failed",
                    stats.failed_cells
                )));
            }
        }
        Command::Map { method, frequency } => {
            let path = run_map(&rc, &method, frequency)?;
            println!("wrote {}", path.display());
        }
        Command::OptimizeMd { frequency } => {
            let (params, trace) = run_optimize_md(&rc, frequency)?;
            println!("wrote {}", params.display());
            println!("wrote {}", trace.display());
        }
        Command::Ingest {
            input,
            frequency,
            out_file,
        } => {
            let path = run_ingest(&rc, &input, frequency, out_file)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

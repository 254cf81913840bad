use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emergence_lab::data::{default_cache_dir, fetch_dataset, DatasetName};
use emergence_lab::harness::{emit_report, oracle, read_run, run_experiment, ExperimentConfig, HarnessError, ReportFormat};
use emergence_lab::Error;

#[derive(Parser)]
#[command(name = "emergence-lab", version, about = "Path-count emergence of neural networks under training and pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download (or verify the cached copy of) a dataset.
    Fetch {
        #[arg(long)]
        dataset: String,
        /// Defaults to $EMERGENCE_LAB_CACHE or ~/.cache/emergence-lab.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Render a finished run as CSV, JSONL or SVG.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        format: ReportFormat,
        /// Defaults to <run>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form emergence for explicit layer counts.
    Oracle {
        #[arg(long, value_delimiter = ',', required = true)]
        shape: Vec<u64>,
        #[arg(long, value_delimiter = ',', required = true)]
        active: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        filters: Option<Vec<u64>>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fetch { dataset, cache } => {
            let name: DatasetName = dataset.parse()?;
            let report = fetch_dataset(name, &cache.unwrap_or_else(default_cache_dir))?;
            for p in &report.paths {
                println!("{}", p.display());
            }
            eprintln!("{} bytes downloaded", report.bytes_downloaded);
        }
        Command::Run { config, out, cache } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let out_dir = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| HarnessError::Config("no output directory (--out or output_dir)".into()))?;
            let result = run_experiment(&cfg, &cache.unwrap_or_else(default_cache_dir), &out_dir)?;
            for status in &result.log.branches {
                let last = result.log.branch_records(&status.branch).last();
                match last {
                    Some(r) => println!(
                        "{:<22} epoch {:>3}  test {:.4}  E {}  rel {:.4e}",
                        status.branch, r.epoch, r.test_accuracy, r.emergence_exact, r.relative_emergence
                    ),
                    None => println!("{:<22} no epochs", status.branch),
                }
            }
            let failed: Vec<String> =
                result.log.failed().map(|b| format!("{} ({:?})", b.branch, b.outcome)).collect();
            if !failed.is_empty() {
                return Err(HarnessError::Numeric(format!("failed branches: {}", failed.join(", "))).into());
            }
        }
        Command::Report { run, format, out } => {
            let log = read_run(&run)?;
            for p in emit_report(&log, format, &out.unwrap_or_else(|| run.join("report")))? {
                println!("{}", p.display());
            }
        }
        Command::Oracle { shape, active, filters } => {
            let (e, ln) = oracle(&shape, &active, filters.as_deref())?;
            println!("{e}");
            println!("ln_e {ln}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

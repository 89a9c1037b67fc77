use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surropt_cli::report::{self, Format, Metric};
use surropt_cli::{bench, config, default_out_dir, execute, rundir, WriterOptions};

#[derive(Parser)]
#[command(name = "surropt", version, about = "Surrogate-assisted constrained multi-objective optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization from a TOML config.
    Run {
        /// TOML run configuration
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: runs/<problem>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Save surrogate weights after every epoch.
        #[arg(long)]
        checkpoints: bool,
        /// Record per-evaluation timing.
        #[arg(long)]
        telemetry: bool,
    },
    /// Compare run directories under a shared normalization.
    Report {
        /// Run directories written by `surropt run`
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        metric: Metric,
        /// Reference front for IGD (one point per line); defaults to the
        /// nondominated union of all runs.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Also write CSV to this file.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Check each run's metrics table against its evaluation log.
        #[arg(long)]
        verify: bool,
    },
    /// Inspect the built-in problems.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
}

#[derive(Subcommand)]
enum BenchAction {
    /// Names and sizes of the built-in problems
    List,
    /// Bounds, constraints and feasibility rates of one problem
    Describe { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<config::ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config: path,
            seed,
            out,
            workers,
            checkpoints,
            telemetry,
        } => {
            let mut cfg = config::load_config(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let out = out.unwrap_or_else(|| default_out_dir(&cfg));
            let history = execute(&cfg, &out, WriterOptions { checkpoints, telemetry })?;
            let last = history.epoch_metrics().last().expect("epoch 0 is always recorded");
            println!(
                "{}: {} evaluations over {} epochs, {} feasible, final HV {:.6}",
                out.display(),
                history.len(),
                last.epoch,
                last.feasible_count,
                last.hv_norm
            );
        }
        Command::Report {
            runs,
            metric,
            reference,
            format,
            output,
            verify,
        } => {
            let logs = report::load_runs(&runs)?;
            if verify {
                let mut failed = false;
                for (dir, log) in runs.iter().zip(&logs) {
                    let stored = rundir::read_metrics(&dir.join(rundir::METRICS))?;
                    let diffs = report::verify(log, &stored);
                    if diffs.is_empty() {
                        println!("{}: metrics table matches the evaluation log", dir.display());
                    } else {
                        failed = true;
                        for d in diffs {
                            println!("{}: {d}", dir.display());
                        }
                    }
                }
                if failed {
                    return Ok(ExitCode::FAILURE);
                }
            }
            let reference = match &reference {
                Some(p) => Some(report::read_reference(p, logs[0].q)?),
                None => None,
            };
            let rows = report::compare(&logs, metric, reference.as_deref())?;
            let csv = report::render_csv(&rows)?;
            match format {
                Format::Table => print!("{}", report::render_table(&rows)),
                Format::Csv => print!("{csv}"),
            }
            if let Some(p) = output {
                std::fs::write(&p, csv)?;
            }
        }
        Command::Bench { action } => match action {
            BenchAction::List => print!("{}", bench::list()?),
            BenchAction::Describe { name } => print!("{}", bench::describe(&name)?),
        },
    }
    Ok(ExitCode::SUCCESS)
}

//! Command-line front end for surropt: configuration files, run
//! directories and post-hoc reports.

pub mod bench;
pub mod config;
pub mod report;
pub mod rundir;

use std::path::{Path, PathBuf};

use surropt::engine::{self, RunConfig};
use surropt::evaluator::LocalPool;
use surropt::problems;
use surropt::RunHistory;

pub use config::{load_config, parse_config, ConfigError};
pub use rundir::{RunWriter, WriterOptions};

/// Default output directory for a config.
pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-seed{}", cfg.problem, cfg.seed))
}

/// Runs `cfg` and writes the run directory. Returns the finished history.
pub fn execute(cfg: &RunConfig, out: &Path, opts: WriterOptions) -> anyhow::Result<RunHistory> {
    let problem = problems::by_name(&cfg.problem, cfg.dim)?;
    let mut writer = RunWriter::create(out, cfg, problem.space.names(), opts)?;
    let history = engine::run_with(cfg, &problem, &LocalPool::new(cfg.workers), &mut writer)?;
    writer.finish(history.epoch_metrics())?;
    Ok(history)
}

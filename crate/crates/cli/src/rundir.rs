//! Run-directory layout, writer and reader.
//!
//! ```text
//! config.toml        resolved configuration, written once at start
//! evaluations.jsonl  one record per true evaluation, appended per epoch
//! metrics.csv        one row per epoch, written when the run completes
//! sensitivity.csv    per-epoch elasticities and indices (sensitivity on)
//! traces.jsonl       feasibility-descent summaries (feasolve on)
//! telemetry.jsonl    per-evaluation timing and worker ids (opt-in)
//! checkpoints/       surrogate weights per epoch (opt-in)
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use surropt::engine::{EpochArtifacts, RunConfig, RunObserver};
use surropt::sensitivity::SensitivityMode;
use surropt::{EpochMetrics, EvaluationRecord, Provenance};

pub const CONFIG: &str = "config.toml";
pub const EVALUATIONS: &str = "evaluations.jsonl";
pub const METRICS: &str = "metrics.csv";
pub const SENSITIVITY: &str = "sensitivity.csv";
pub const TRACES: &str = "traces.jsonl";
pub const TELEMETRY: &str = "telemetry.jsonl";
pub const CHECKPOINTS: &str = "checkpoints";

/// One line of `evaluations.jsonl`. Non-finite objectives are stored as
/// `null` and read back as NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub epoch: usize,
    pub provenance: Provenance,
    pub params: Vec<f64>,
    pub objectives: Vec<Option<f64>>,
    pub constraints: Vec<bool>,
    /// Surrogate objective prediction made before the evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<f64>>,
}

impl LogRecord {
    pub fn new(r: &EvaluationRecord, predicted: Option<Vec<f64>>) -> Self {
        Self {
            epoch: r.epoch,
            provenance: r.provenance,
            params: r.params.clone(),
            objectives: r.objectives.iter().map(|v| v.is_finite().then_some(*v)).collect(),
            constraints: r.constraints.clone(),
            predicted,
        }
    }

    pub fn record(&self) -> EvaluationRecord {
        EvaluationRecord {
            params: self.params.clone(),
            objectives: self.objectives.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            constraints: self.constraints.clone(),
            epoch: self.epoch,
            provenance: self.provenance,
        }
    }
}

#[derive(Serialize)]
struct SensitivityRow<'a> {
    epoch: usize,
    parameter: &'a str,
    s_bar: f64,
    eta_crossover: f64,
    eta_mutation: f64,
}

#[derive(Serialize)]
struct TraceSummary<'a> {
    epoch: usize,
    stop: surropt::feasolve::StopReason,
    steps: usize,
    loss: Vec<f64>,
    final_feasibility: Option<&'a Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct Telemetry<'a> {
    epoch: usize,
    batch: u64,
    index: usize,
    worker: usize,
    attempts: u32,
    wall_seconds: f64,
    error: Option<&'a str>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WriterOptions {
    pub checkpoints: bool,
    pub telemetry: bool,
}

/// Observer that streams a run to disk.
pub struct RunWriter {
    dir: PathBuf,
    names: Vec<String>,
    evaluations: BufWriter<File>,
    sensitivity: Option<csv::Writer<File>>,
    traces: Option<BufWriter<File>>,
    telemetry: Option<BufWriter<File>>,
    checkpoints: bool,
}

fn create(path: &Path) -> anyhow::Result<File> {
    OpenOptions::new()
        .create_new(true)
        .write(true)
        .open(path)
        .with_context(|| format!("cannot create {}", path.display()))
}

impl RunWriter {
    /// Creates the directory (which must be new or empty) and writes the
    /// config snapshot.
    pub fn create(dir: &Path, cfg: &RunConfig, param_names: &[String], opts: WriterOptions) -> anyhow::Result<Self> {
        if dir.exists() && fs::read_dir(dir)?.next().is_some() {
            bail!("output directory {} is not empty", dir.display());
        }
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        create(&dir.join(CONFIG))?.write_all(crate::config::snapshot(cfg).as_bytes())?;
        let evaluations = BufWriter::new(create(&dir.join(EVALUATIONS))?);
        let sensitivity = match cfg.sensitivity {
            SensitivityMode::Off => None,
            _ => Some(csv::Writer::from_writer(create(&dir.join(SENSITIVITY))?)),
        };
        let traces = if cfg.use_feasolve {
            Some(BufWriter::new(create(&dir.join(TRACES))?))
        } else {
            None
        };
        let telemetry = if opts.telemetry {
            Some(BufWriter::new(create(&dir.join(TELEMETRY))?))
        } else {
            None
        };
        if opts.checkpoints {
            fs::create_dir(dir.join(CHECKPOINTS))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            names: param_names.to_vec(),
            evaluations,
            sensitivity,
            traces,
            telemetry,
            checkpoints: opts.checkpoints,
        })
    }

    fn write_epoch(&mut self, a: &EpochArtifacts<'_>) -> anyhow::Result<()> {
        let epoch = a.metrics.epoch;
        for (r, p) in a.records.iter().zip(a.predicted) {
            serde_json::to_writer(&mut self.evaluations, &LogRecord::new(r, p.clone()))?;
            self.evaluations.write_all(b"\n")?;
        }
        self.evaluations.flush()?;
        if let (Some(w), Some(s), Some(eta)) = (self.sensitivity.as_mut(), a.sensitivity, a.indices) {
            for (j, name) in self.names.iter().enumerate() {
                w.serialize(SensitivityRow {
                    epoch,
                    parameter: name,
                    s_bar: s.s_bar[j],
                    eta_crossover: eta.cross[j],
                    eta_mutation: eta.mutation[j],
                })?;
            }
            w.flush()?;
        }
        if let Some(w) = self.traces.as_mut() {
            for t in a.traces {
                let summary = TraceSummary {
                    epoch,
                    stop: t.stop,
                    steps: t.len(),
                    loss: t.steps.iter().map(|s| s.loss).collect(),
                    final_feasibility: t.steps.last().map(|s| &s.feasibility),
                };
                serde_json::to_writer(&mut *w, &summary)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        if let Some(w) = self.telemetry.as_mut() {
            for r in a.results {
                serde_json::to_writer(
                    &mut *w,
                    &Telemetry {
                        epoch,
                        batch: r.batch,
                        index: r.index,
                        worker: r.worker,
                        attempts: r.attempts,
                        wall_seconds: r.wall_seconds,
                        error: r.error.as_deref(),
                    },
                )?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        if self.checkpoints {
            if let Some(model) = a.surrogate {
                fs::write(self.dir.join(CHECKPOINTS).join(format!("epoch_{epoch:04}.json")), model.to_json())?;
            }
        }
        Ok(())
    }

    /// Writes the metrics table once the final HV series is known.
    pub fn finish(self, metrics: &[EpochMetrics]) -> anyhow::Result<()> {
        write_metrics(&self.dir.join(METRICS), metrics)
    }
}

impl RunObserver for RunWriter {
    fn on_epoch(&mut self, a: &EpochArtifacts<'_>) -> surropt::Result<()> {
        self.write_epoch(a)
            .map_err(|e| surropt::Error::InvalidConfig(format!("writing run directory: {e:#}")))
    }
}

pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `evaluations.jsonl`, rejecting malformed or truncated lines.
pub fn read_evaluations(path: &Path) -> anyhow::Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_evaluations(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse_evaluations(text: &str) -> anyhow::Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let n = i + 1;
        if !line.ends_with('\n') {
            bail!("line {n}: truncated record (no trailing newline); the run was probably interrupted");
        }
        let body = line.trim_end();
        if body.is_empty() {
            bail!("line {n}: empty line");
        }
        let rec: LogRecord = serde_json::from_str(body).with_context(|| {
            if n == lines.len() {
                format!("line {n}: truncated or malformed last record")
            } else {
                format!("line {n}: malformed record")
            }
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> anyhow::Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: row {}", path.display(), i + 2)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LogRecord {
        LogRecord {
            epoch: 2,
            provenance: Provenance::Feasolve,
            params: vec![0.1, 1.0 / 3.0, -2.5e-300],
            objectives: vec![Some(std::f64::consts::PI), None],
            constraints: vec![true, false],
            predicted: Some(vec![3.0, 0.1 + 0.2]),
        }
    }

    #[test]
    fn records_round_trip_bit_exact() {
        let line = serde_json::to_string(&sample()).unwrap() + "\n";
        let back = parse_evaluations(&line).unwrap();
        assert_eq!(back, vec![sample()]);
        assert!(back[0].record().objectives[1].is_nan());
        assert!(line.starts_with("{\"epoch\":2,\"provenance\":\"feasolve\",\"params\":"));
    }

    #[test]
    fn truncation_is_reported() {
        let full = serde_json::to_string(&sample()).unwrap() + "\n";
        let text = format!("{full}{}", &full[..full.len() / 2]);
        let err = parse_evaluations(&text).unwrap_err();
        assert!(format!("{err:#}").contains("line 2: truncated"), "{err:#}");
        let text = format!("{full}{full}", full = full);
        assert_eq!(parse_evaluations(&text).unwrap().len(), 2);
        let bad = format!("{full}{{\"epoch\":1}}\n");
        assert!(format!("{:#}", parse_evaluations(&bad).unwrap_err()).contains("line 2"));
    }

    #[test]
    fn metrics_round_trip_with_nan() {
        let dir = tempfile::tempdir().unwrap();
        let m = EpochMetrics {
            epoch: 0,
            cumulative_evals: 10,
            hv_norm: 0.123_456_789_012_345_67,
            feasible_count: 3,
            nrmse: f64::NAN,
            mode: "c+o".into(),
            feasolve_steps: 0,
            wall_seconds: 0.5,
            ecov: f64::NAN,
        };
        let path = dir.path().join(METRICS);
        write_metrics(&path, &[m.clone()]).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back[0].hv_norm.to_bits(), m.hv_norm.to_bits());
        assert!(back[0].nrmse.is_nan());
        assert_eq!(back[0].mode, "c+o");
    }
}

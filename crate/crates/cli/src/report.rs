//! Post-hoc metrics computed from evaluation logs alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use surropt::engine;
use surropt::metrics::{self, NormalizationContext};
use surropt::{EpochMetrics, EvaluationRecord, ParetoArchive};

use crate::rundir::{self, LogRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Hv,
    Auc,
    Igd,
    Eps,
    Coverage,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

/// One run directory's evaluation log.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub name: String,
    pub records: Vec<EvaluationRecord>,
    pub predicted: Vec<Option<Vec<f64>>>,
    pub q: usize,
}

impl RunLog {
    pub fn from_lines(name: impl Into<String>, lines: &[LogRecord]) -> anyhow::Result<Self> {
        let name = name.into();
        let Some(first) = lines.first() else {
            bail!("run `{name}` has no evaluations");
        };
        let q = first.objectives.len();
        if let Some(bad) = lines.iter().position(|l| l.objectives.len() != q) {
            bail!("run `{name}`: record {} has {} objectives, expected {q}", bad + 1, lines[bad].objectives.len());
        }
        Ok(Self {
            name,
            records: lines.iter().map(LogRecord::record).collect(),
            predicted: lines.iter().map(|l| l.predicted.clone()).collect(),
            q,
        })
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let lines = rundir::read_evaluations(&dir.join(rundir::EVALUATIONS))?;
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Self::from_lines(name, &lines)
    }

    pub fn epochs(&self) -> usize {
        self.records.iter().map(|r| r.epoch).max().map_or(0, |e| e + 1)
    }

    /// Archive objectives after each epoch.
    pub fn fronts(&self) -> Vec<Vec<Vec<f64>>> {
        let mut archive = ParetoArchive::new();
        let mut out = Vec::new();
        let mut it = self.records.iter().peekable();
        for e in 0..self.epochs() {
            while let Some(r) = it.next_if(|r| r.epoch <= e) {
                archive.insert(r.clone());
            }
            out.push(archive.objectives());
        }
        out
    }
}

/// The numeric metrics-table columns that depend only on the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Recomputed {
    pub epoch: usize,
    pub cumulative_evals: usize,
    pub hv_norm: f64,
    pub feasible_count: usize,
    pub nrmse: f64,
    pub ecov: f64,
}

pub fn recompute(run: &RunLog) -> Vec<Recomputed> {
    let fronts = run.fronts();
    let hv = metrics::normalized_hypervolume(&fronts, run.q).unwrap_or_else(|_| vec![f64::NAN; fronts.len()]);
    (0..fronts.len())
        .map(|e| {
            let upto: Vec<&EvaluationRecord> = run.records.iter().filter(|r| r.epoch <= e).collect();
            let (truth, pred): (Vec<Vec<f64>>, Vec<Vec<f64>>) = run
                .records
                .iter()
                .zip(&run.predicted)
                .filter(|(r, _)| r.epoch == e)
                .filter_map(|(r, p)| match p {
                    Some(p) if r.objectives.iter().all(|v| v.is_finite()) => Some((r.objectives.clone(), p.clone())),
                    _ => None,
                })
                .unzip();
            Recomputed {
                epoch: e,
                cumulative_evals: upto.len(),
                hv_norm: hv[e],
                feasible_count: upto.iter().filter(|r| r.is_usable_feasible()).count(),
                nrmse: metrics::nrmse(&truth, &pred).unwrap_or(f64::NAN),
                ecov: engine::epsilon_convergence(&fronts[..=e], run.q),
            }
        })
        .collect()
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

/// Compares a stored metrics table against the log. Returns the list of
/// mismatches (empty when everything agrees).
pub fn verify(run: &RunLog, stored: &[EpochMetrics]) -> Vec<String> {
    let fresh = recompute(run);
    let mut out = Vec::new();
    if fresh.len() != stored.len() {
        out.push(format!("{} epochs in log, {} rows in metrics table", fresh.len(), stored.len()));
    }
    for (f, s) in fresh.iter().zip(stored) {
        let e = s.epoch;
        if f.epoch != s.epoch {
            out.push(format!("row {}: epoch {} vs {}", f.epoch, s.epoch, f.epoch));
        }
        if f.cumulative_evals != s.cumulative_evals {
            out.push(format!("epoch {e}: cumulative_evals {} vs {}", s.cumulative_evals, f.cumulative_evals));
        }
        if f.feasible_count != s.feasible_count {
            out.push(format!("epoch {e}: feasible_count {} vs {}", s.feasible_count, f.feasible_count));
        }
        for (name, a, b) in [("hv_norm", s.hv_norm, f.hv_norm), ("nrmse", s.nrmse, f.nrmse), ("ecov", s.ecov, f.ecov)] {
            if !same(a, b) {
                out.push(format!("epoch {e}: {name} {a} vs {b}"));
            }
        }
    }
    out
}

/// One cell of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub metric: &'static str,
    pub run: String,
    pub against: Option<String>,
    pub epoch: Option<usize>,
    pub value: f64,
}

/// Reads reference-front points: one point per line, comma or whitespace
/// separated; `#` starts a comment.
pub fn read_reference(path: &Path, q: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let p: Vec<f64> = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        if p.len() != q {
            bail!("{}: line {} has {} values, expected {q}", path.display(), i + 1, p.len());
        }
        pts.push(p);
    }
    if pts.is_empty() {
        bail!("{}: no reference points", path.display());
    }
    Ok(pts)
}

/// Cross-run comparison under one shared nadir.
pub fn compare(runs: &[RunLog], metric: Metric, reference: Option<&[Vec<f64>]>) -> anyhow::Result<Vec<Row>> {
    let Some(q) = runs.first().map(|r| r.q) else {
        bail!("no runs given");
    };
    if let Some(bad) = runs.iter().find(|r| r.q != q) {
        bail!("run `{}` has {} objectives but `{}` has {q}", bad.name, bad.q, runs[0].name);
    }
    let fronts: Vec<Vec<Vec<Vec<f64>>>> = runs.iter().map(RunLog::fronts).collect();
    let ctx = NormalizationContext::from_points(fronts.iter().flatten().flatten(), q);
    let norm = |f: &[Vec<f64>]| -> Vec<Vec<f64>> {
        match &ctx {
            Some(c) => f.iter().map(|p| c.normalize(p)).collect(),
            None => f.to_vec(),
        }
    };
    let want = |m: Metric| metric == m || metric == Metric::All;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (run, fr) in runs.iter().zip(&fronts) {
        let hv: Vec<f64> = match &ctx {
            Some(c) => fr.iter().map(|f| c.hypervolume(f)).collect::<surropt::Result<_>>()?,
            None => vec![0.0; fr.len()],
        };
        if want(Metric::Hv) {
            for (e, v) in hv.iter().enumerate() {
                rows.push(Row {
                    metric: "hv",
                    run: run.name.clone(),
                    against: None,
                    epoch: Some(e),
                    value: *v,
                });
            }
        }
        series.push(hv);
    }
    if want(Metric::Auc) {
        for (run, hv) in runs.iter().zip(&series) {
            rows.push(Row {
                metric: "auc",
                run: run.name.clone(),
                against: None,
                epoch: None,
                value: metrics::hv_auc(hv),
            });
        }
    }
    let finals: Vec<Vec<Vec<f64>>> = fronts.iter().map(|f| norm(f.last().map_or(&[][..], Vec::as_slice))).collect();
    if want(Metric::Igd) {
        let (reference, label) = match reference {
            Some(r) => (norm(r), "reference".to_string()),
            None => {
                let union = ParetoArchive::from_records(runs.iter().flat_map(|r| &r.records));
                (norm(&union.objectives()), "union".to_string())
            }
        };
        for (run, f) in runs.iter().zip(&finals) {
            rows.push(Row {
                metric: "igd",
                run: run.name.clone(),
                against: Some(label.clone()),
                epoch: None,
                value: metrics::igd(f, &reference),
            });
        }
    }
    for (m, name, f) in [
        (Metric::Eps, "eps", metrics::epsilon_additive as fn(&[Vec<f64>], &[Vec<f64>]) -> f64),
        (Metric::Coverage, "coverage", metrics::set_coverage),
    ] {
        if !want(m) {
            continue;
        }
        for (a, fa) in runs.iter().zip(&finals) {
            for (b, fb) in runs.iter().zip(&finals) {
                if std::ptr::eq(a, b) {
                    continue;
                }
                rows.push(Row {
                    metric: name,
                    run: a.name.clone(),
                    against: Some(b.name.clone()),
                    epoch: None,
                    value: f(fa, fb),
                });
            }
        }
    }
    Ok(rows)
}

pub fn render_csv(rows: &[Row]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "run", "against", "epoch", "value"])?;
    for r in rows {
        w.write_record([
            r.metric.to_string(),
            r.run.clone(),
            r.against.clone().unwrap_or_default(),
            r.epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.value.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Human-readable table: HV as an epoch × run grid, the rest one line each.
pub fn render_table(rows: &[Row]) -> String {
    let mut out = String::new();
    let runs: Vec<&str> = {
        let mut v: Vec<&str> = Vec::new();
        for r in rows {
            if !v.contains(&r.run.as_str()) {
                v.push(&r.run);
            }
        }
        v
    };
    let hv: Vec<&Row> = rows.iter().filter(|r| r.metric == "hv").collect();
    if !hv.is_empty() {
        let width = runs.iter().map(|r| r.len()).max().unwrap_or(0).max(12);
        let _ = write!(out, "{:>5}", "epoch");
        for r in &runs {
            let _ = write!(out, "  {r:>width$}");
        }
        out.push('\n');
        let epochs = hv.iter().filter_map(|r| r.epoch).max().map_or(0, |e| e + 1);
        for e in 0..epochs {
            let _ = write!(out, "{e:>5}");
            for r in &runs {
                match hv.iter().find(|x| x.run == *r && x.epoch == Some(e)) {
                    Some(x) => {
                        let _ = write!(out, "  {:>width$.6}", x.value);
                    }
                    None => {
                        let _ = write!(out, "  {:>width$}", "-");
                    }
                }
            }
            out.push('\n');
        }
    }
    for r in rows.iter().filter(|r| r.metric != "hv") {
        match &r.against {
            Some(b) => {
                let _ = writeln!(out, "{:<9} {} vs {}: {:.6}", r.metric, r.run, b, r.value);
            }
            None => {
                let _ = writeln!(out, "{:<9} {}: {:.6}", r.metric, r.run, r.value);
            }
        }
    }
    out
}

pub fn load_runs(dirs: &[PathBuf]) -> anyhow::Result<Vec<RunLog>> {
    let mut runs: Vec<RunLog> = dirs.iter().map(|d| RunLog::load(d)).collect::<anyhow::Result<_>>()?;
    // keep names unique so pairwise rows stay unambiguous
    for i in 0..runs.len() {
        if runs[..i].iter().any(|r| r.name == runs[i].name) {
            runs[i].name = dirs[i].display().to_string();
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use surropt::Provenance;

    fn line(epoch: usize, obj: &[f64], feasible: bool) -> LogRecord {
        LogRecord {
            epoch,
            provenance: Provenance::Init,
            params: vec![0.0],
            objectives: obj.iter().map(|v| Some(*v)).collect(),
            constraints: vec![feasible],
            predicted: None,
        }
    }

    fn run(name: &str, pts: &[[f64; 2]]) -> RunLog {
        let lines: Vec<LogRecord> = pts.iter().enumerate().map(|(i, p)| line(i / 2, p, true)).collect();
        RunLog::from_lines(name, &lines).unwrap()
    }

    #[test]
    fn dominating_run_has_nonpositive_epsilon() {
        let a = run("a", &[[0.1, 0.5], [0.5, 0.1]]);
        let b = run("b", &[[0.2, 0.6], [0.6, 0.2], [0.5, 0.5]]);
        let rows = compare(&[a, b], Metric::Eps, None).unwrap();
        let ab = rows.iter().find(|r| r.run == "a").unwrap().value;
        let ba = rows.iter().find(|r| r.run == "b").unwrap().value;
        assert!(ab <= 0.0, "{ab}");
        assert!(ba > 0.0);
    }

    #[test]
    fn mismatched_objective_counts_rejected() {
        let a = run("a", &[[0.1, 0.5]]);
        let c = RunLog::from_lines("c", &[line(0, &[1.0, 2.0, 3.0], true)]).unwrap();
        assert!(compare(&[a, c], Metric::Hv, None).is_err());
    }

    #[test]
    fn single_run_hv_series_and_pure_output() {
        let a = run("a", &[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [2.0, 2.0]]);
        let rows = compare(std::slice::from_ref(&a), Metric::Hv, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].value >= rows[0].value);
        let again = compare(&[a], Metric::Hv, None).unwrap();
        assert_eq!(render_csv(&rows).unwrap(), render_csv(&again).unwrap());
        assert_eq!(render_table(&rows), render_table(&again));
    }

    #[test]
    fn recompute_matches_hand_values() {
        let lines = vec![
            line(0, &[1.0, 0.0], true),
            line(0, &[0.0, 1.0], false),
            line(1, &[0.0, 1.0], true),
            LogRecord {
                predicted: Some(vec![0.5, 0.5]),
                ..line(1, &[0.5, 0.5], true)
            },
        ];
        let r = recompute(&RunLog::from_lines("x", &lines).unwrap());
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].cumulative_evals, r[0].feasible_count), (2, 1));
        assert_eq!((r[1].cumulative_evals, r[1].feasible_count), (4, 3));
        // nadir (1, 1), reference 1.1: slabs over f1 of widths .5, .5, .1
        let expect1 = 0.5 * 0.1 + 0.5 * 0.6 + 0.1 * 1.1;
        assert!((r[1].hv_norm - expect1).abs() < 1e-12, "{}", r[1].hv_norm);
        assert!((r[0].hv_norm - 0.1 * 1.1).abs() < 1e-12);
        assert!(r[0].ecov.is_nan());
        assert!(r[1].nrmse.is_nan()); // a single prediction has no range
    }
}

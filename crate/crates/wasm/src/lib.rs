//! Browser bindings. Each exported function takes plain values and returns
//! a JSON string; the `*_json` functions hold the logic so they can be
//! tested natively.

use serde::Serialize;
use surropt::engine::{self, RunConfig};
use surropt::metrics::NormalizationContext;
use surropt::problems;
use surropt::surrogate::SurrogateConfig;
use surropt::{dominates, ParetoArchive};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct HvReport {
    points: usize,
    nondominated: Vec<usize>,
    nadir: Vec<f64>,
    hv_norm: f64,
}

/// Parses one point per line (whitespace or comma separated).
fn parse_points(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: `{t}` is not a number", i + 1)))
            .collect::<Result<Vec<f64>, String>>()?;
        if let Some(first) = out.first() {
            if first.len() != p.len() {
                return Err(format!("line {}: expected {} values, got {}", i + 1, first.len(), p.len()));
            }
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err("no points".into());
    }
    Ok(out)
}

pub fn hypervolume_json(text: &str) -> Result<String, String> {
    let pts = parse_points(text)?;
    let q = pts[0].len();
    if !(1..=6).contains(&q) {
        return Err(format!("1 to 6 objectives supported, got {q}"));
    }
    let ctx = NormalizationContext::from_points(&pts, q).ok_or("points must be finite")?;
    let hv = ctx.hypervolume(&pts).map_err(|e| e.to_string())?;
    let nondominated = (0..pts.len())
        .filter(|&i| !pts.iter().any(|o| dominates(o, &pts[i]).unwrap_or(false)))
        .collect();
    let report = HvReport {
        points: pts.len(),
        nondominated,
        nadir: ctx.nadir.clone(),
        hv_norm: hv,
    };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    evals: usize,
    hv: f64,
    feasible: usize,
    mode: String,
}

#[derive(Serialize)]
struct RunReport {
    epochs: Vec<EpochRow>,
    /// `[f1, f2, feasible]` for every evaluation (first two objectives).
    points: Vec<(f64, f64, bool)>,
    front: Vec<(f64, f64)>,
}

/// A small loop sized for a browser tab.
pub fn optimize_json(problem: &str, seed: u64, epochs: usize, feasolve: bool) -> Result<String, String> {
    let cfg = RunConfig {
        problem: problem.to_string(),
        seed,
        initial_samples: 40,
        population: 20,
        generations: 5,
        epochs: epochs.clamp(1, 20),
        use_feasolve: feasolve,
        surrogate: SurrogateConfig {
            blocks: 1,
            block_dim: 16,
            folds: 2,
            learning_rate: 1e-2,
            max_epochs: Some(100),
            ..SurrogateConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let history = engine::run(&cfg).map_err(|e| e.to_string())?;
    let epochs = history
        .epoch_metrics()
        .iter()
        .map(|m| EpochRow {
            epoch: m.epoch,
            evals: m.cumulative_evals,
            hv: m.hv_norm,
            feasible: m.feasible_count,
            mode: m.mode.clone(),
        })
        .collect();
    let two = |o: &[f64]| (o[0], o.get(1).copied().unwrap_or(0.0));
    let points = history
        .records()
        .iter()
        .filter(|r| r.objectives.iter().all(|v| v.is_finite()))
        .map(|r| {
            let (a, b) = two(&r.objectives);
            (a, b, r.is_feasible())
        })
        .collect();
    let archive: ParetoArchive = history.archive();
    let mut front: Vec<(f64, f64)> = archive.objectives().iter().map(|o| two(o)).collect();
    front.sort_by(|a, b| a.0.total_cmp(&b.0));
    serde_json::to_string(&RunReport { epochs, points, front }).map_err(|e| e.to_string())
}

pub fn describe_text(problem: &str) -> Result<String, String> {
    let p = problems::by_name(problem, None).map_err(|e| e.to_string())?;
    let mut s = format!(
        "{}: {} parameters, {} objectives, {} constraints\n{}\n",
        p.name,
        p.space.dim(),
        p.objectives,
        p.constraints,
        p.description
    );
    for (j, name) in p.space.names().iter().enumerate() {
        s.push_str(&format!("  {name} in [{}, {}]\n", p.space.lower()[j], p.space.upper()[j]));
    }
    if let Some(r) = &p.rates {
        s.push_str(&format!("uniform joint feasible rate {:.3e} ({} samples)\n", r.joint, r.samples));
    }
    Ok(s)
}

#[wasm_bindgen]
pub fn hypervolume(text: &str) -> Result<String, JsError> {
    hypervolume_json(text).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn optimize(problem: &str, seed: u32, epochs: u32, feasolve: bool) -> Result<String, JsError> {
    optimize_json(problem, u64::from(seed), epochs as usize, feasolve).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn describe(problem: &str) -> Result<String, JsError> {
    describe_text(problem).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn problem_names() -> String {
    problems::PROBLEM_NAMES.join(",")
}

//! Gradient descent on candidate parameters against a frozen surrogate,
//! steering them toward predicted feasibility and low objective values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{sigmoid, Differentiable};

pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Objective,
    Constraint,
    Distance,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeasolveConfig {
    /// The first available target sets the gradient scale.
    pub targets: Vec<Target>,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub plateau_window: usize,
    pub plateau_ratio: f64,
    pub reference_factor: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Extra true evaluations drawn from the descent trace each epoch.
    pub trace_samples: usize,
    /// Largest trace pool handed to the diversity filter.
    pub trace_pool: usize,
}

impl Default for FeasolveConfig {
    fn default() -> Self {
        Self {
            targets: vec![Target::Constraint, Target::Objective],
            max_iters: 1000,
            learning_rate: 1e-3,
            plateau_window: 50,
            plateau_ratio: 0.01,
            reference_factor: 1.1,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            trace_samples: 0,
            trace_pool: 2000,
        }
    }
}

impl FeasolveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("feasolve: {m}")));
        if self.targets.is_empty() {
            return bad("targets must not be empty");
        }
        let mut seen = self.targets.clone();
        seen.sort_by_key(|t| *t as u8);
        seen.dedup();
        if seen.len() != self.targets.len() {
            return bad("targets must not repeat");
        }
        if self.max_iters == 0 || self.plateau_window == 0 {
            return bad("max_iters and plateau_window must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.trace_pool < 2 {
            return bad("trace_pool must be >= 2");
        }
        Ok(())
    }
}

type Batch = Vec<Vec<f64>>;

fn zeros_like(m: &[Vec<f64>]) -> Batch {
    m.iter().map(|r| vec![0.0; r.len()]).collect()
}

/// Negative hypervolume-style product against a nadir that includes the
/// batch itself. Returns the loss and its gradient w.r.t. `pred`.
pub fn loss_objective(pred: &[Vec<f64>], train_max: &[f64], reference: f64) -> (f64, Batch) {
    let q = train_max.len();
    let mut nadir = train_max.to_vec();
    let mut arg: Vec<Option<usize>> = vec![None; q];
    for (i, p) in pred.iter().enumerate() {
        for j in 0..q {
            if p[j] > nadir[j] {
                nadir[j] = p[j];
                arg[j] = Some(i);
            }
        }
    }
    let mut loss = 0.0;
    let mut grad = zeros_like(pred);
    let mut d_nadir = vec![0.0; q];
    for (i, p) in pred.iter().enumerate() {
        let f: Vec<f64> = (0..q).map(|j| reference - p[j] / (nadir[j] + EPS)).collect();
        if f.iter().any(|v| *v <= 0.0) {
            continue;
        }
        loss -= f.iter().product::<f64>();
        for j in 0..q {
            let others: f64 = (0..q).filter(|&l| l != j).map(|l| f[l]).product();
            let denom = nadir[j] + EPS;
            grad[i][j] += others / denom;
            d_nadir[j] -= others * p[j] / (denom * denom);
        }
    }
    for j in 0..q {
        if let Some(i) = arg[j] {
            grad[i][j] += d_nadir[j];
        }
    }
    (loss, grad)
}

/// Mean binary focal cross-entropy against all-ones targets, computed from
/// logits. Returns the loss and its gradient w.r.t. the logits.
pub fn loss_constraint(logits: &[Vec<f64>], gamma: f64, alpha: f64) -> (f64, Batch) {
    let count = logits.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = zeros_like(logits);
    for (i, row) in logits.iter().enumerate() {
        for (j, &z) in row.iter().enumerate() {
            let c = sigmoid(z);
            let u = sigmoid(-z);
            // log c = -softplus(-z), stable for very negative logits
            let log_c = -((-z).max(0.0) + (-z.abs()).exp().ln_1p());
            let w = if gamma == 0.0 { 1.0 } else { u.powf(gamma) };
            loss -= alpha * w * log_c;
            grad[i][j] = -alpha * w * (u - gamma * c * log_c) / count;
        }
    }
    (loss / count, grad)
}

/// Negative mean distance from candidates to training inputs, both in
/// bounds-normalized coordinates. Gradient is w.r.t. the normalized candidates.
pub fn loss_distance(candidates: &[Vec<f64>], training: &[Vec<f64>]) -> (f64, Batch) {
    let b = candidates.len().max(1) as f64;
    let n = training.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = zeros_like(candidates);
    for (i, x) in candidates.iter().enumerate() {
        for t in training {
            let d = x.iter().zip(t).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
            loss -= d;
            if d > 0.0 {
                for j in 0..x.len() {
                    grad[i][j] -= (x[j] - t[j]) / d / (b * n);
                }
            }
        }
    }
    (loss / (b * n), grad)
}

/// Squared penalty on negative predictions.
pub fn loss_zero(pred: &[Vec<f64>]) -> (f64, Batch) {
    let mut loss = 0.0;
    let mut grad = zeros_like(pred);
    for (i, row) in pred.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let neg = (-v).max(0.0);
            loss += neg * neg;
            grad[i][j] = -2.0 * neg;
        }
    }
    (loss, grad)
}

fn norm(g: &[Vec<f64>]) -> f64 {
    g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Factor applied to each gradient so its L2 norm matches the first one's.
pub fn balance_scales(grads: &[Batch]) -> Vec<f64> {
    let Some(first) = grads.first() else {
        return Vec::new();
    };
    let reference = norm(first);
    grads
        .iter()
        .enumerate()
        // the reference keeps its own scale exactly
        .map(|(t, g)| if t == 0 { 1.0 } else { reference / (norm(g) + EPS) })
        .collect()
}

/// Rescales every gradient to the L2 norm of the first and sums them.
pub fn balance_gradients(grads: &[Batch]) -> Batch {
    let Some(first) = grads.first() else {
        return Vec::new();
    };
    let mut total = zeros_like(first);
    for (g, s) in grads.iter().zip(balance_scales(grads)) {
        for (acc, r) in total.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(r) {
                *a += s * b;
            }
        }
    }
    total
}

/// Linear-interpolation percentile of sorted data (`p` in [0, 1]).
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// True when the spread of the trailing `window` losses is small relative to
/// their median. A perfectly flat window always counts as a plateau.
pub fn is_plateau(losses: &[f64], window: usize, ratio: f64) -> bool {
    if losses.len() < window || window == 0 {
        return false;
    }
    let mut w = losses[losses.len() - window..].to_vec();
    w.sort_by(f64::total_cmp);
    let iqr = percentile(&w, 0.75) - percentile(&w, 0.25);
    if iqr == 0.0 {
        return true;
    }
    iqr / percentile(&w, 0.5).abs() < ratio
}

/// Number of leading (elite) members kept untouched: `⌈M/2⌉`.
pub fn hybrid_split(population: usize) -> usize {
    population.div_ceil(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub candidates: Vec<Vec<f64>>,
    pub objectives: Vec<Vec<f64>>,
    pub feasibility: Vec<Vec<f64>>,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Plateau,
    NonFinite,
    NoTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub steps: Vec<TraceStep>,
    pub stop: StopReason,
}

impl DescentTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Training data the losses refer to.
pub struct TrainingContext<'a> {
    pub inputs: &'a [Vec<f64>],
    /// Column maxima of the finite training objectives.
    pub objective_max: Vec<f64>,
}

impl<'a> TrainingContext<'a> {
    pub fn new(inputs: &'a [Vec<f64>], objectives: &[Vec<f64>], q: usize) -> Self {
        let mut objective_max = vec![f64::NEG_INFINITY; q];
        for y in objectives {
            for j in 0..q.min(y.len()) {
                if y[j].is_finite() {
                    objective_max[j] = objective_max[j].max(y[j]);
                }
            }
        }
        Self { inputs, objective_max }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Descends from `start` and returns the final candidates plus the trace.
pub fn make_feasible<M: Differentiable>(
    start: &[Vec<f64>],
    model: &M,
    cfg: &FeasolveConfig,
    ctx: &TrainingContext<'_>,
) -> Result<(Vec<Vec<f64>>, DescentTrace)> {
    cfg.validate()?;
    let space = model.space();
    let q = model.objective_count();
    let k = model.constraint_count();
    let active: Vec<Target> = cfg
        .targets
        .iter()
        .copied()
        .filter(|t| match t {
            Target::Objective | Target::Zero => q > 0,
            Target::Constraint => k > 0,
            Target::Distance => !ctx.inputs.is_empty(),
        })
        .collect();
    let mut x: Vec<Vec<f64>> = start.to_vec();
    if active.is_empty() || x.is_empty() {
        return Ok((
            x,
            DescentTrace {
                steps: Vec::new(),
                stop: StopReason::NoTargets,
            },
        ));
    }
    let sgd = active == [Target::Zero];
    let train_norm: Vec<Vec<f64>> = ctx.inputs.iter().map(|t| space.normalize(t)).collect();
    let n = space.dim();
    let size = x.len() * n;
    let mut adam = AdamState {
        m: vec![0.0; size],
        v: vec![0.0; size],
        t: 0,
    };
    let mut steps = Vec::new();
    let mut losses = Vec::new();
    let mut stop = StopReason::MaxIters;
    for it in 0..cfg.max_iters {
        let fwd = model.forward(&x);
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(active.len());
        for t in &active {
            let (l, g) = match t {
                Target::Objective => {
                    let (l, d) = loss_objective(&fwd.objectives, &ctx.objective_max, cfg.reference_factor);
                    (l, model.backward(&fwd.state, &d, &zeros_like(&fwd.logits)))
                }
                Target::Constraint => {
                    let (l, d) = loss_constraint(&fwd.logits, cfg.focal_gamma, cfg.focal_alpha);
                    (l, model.backward(&fwd.state, &zeros_like(&fwd.objectives), &d))
                }
                Target::Zero => {
                    let (l, d) = loss_zero(&fwd.objectives);
                    (l, model.backward(&fwd.state, &d, &zeros_like(&fwd.logits)))
                }
                Target::Distance => {
                    let xn: Vec<Vec<f64>> = x.iter().map(|p| space.normalize(p)).collect();
                    let (l, d) = loss_distance(&xn, &train_norm);
                    let g = d
                        .into_iter()
                        .map(|row| row.iter().enumerate().map(|(j, v)| v / space.width(j)).collect())
                        .collect();
                    (l, g)
                }
            };
            total += l;
            grads.push(g);
        }
        if !total.is_finite() || grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
            stop = StopReason::NonFinite;
            break;
        }
        steps.push(TraceStep {
            step: it,
            candidates: x.clone(),
            feasibility: fwd.logits.iter().map(|r| r.iter().map(|&z| sigmoid(z)).collect()).collect(),
            objectives: fwd.objectives,
            loss: total,
        });
        losses.push(total);
        if is_plateau(&losses, cfg.plateau_window, cfg.plateau_ratio) {
            stop = StopReason::Plateau;
            break;
        }
        let g = balance_gradients(&grads);
        if sgd {
            for (xi, gi) in x.iter_mut().zip(&g) {
                for (a, b) in xi.iter_mut().zip(gi) {
                    *a -= cfg.learning_rate * b;
                }
            }
        } else {
            adam.t += 1;
            let c1 = 1.0 - 0.9f64.powi(adam.t);
            let c2 = 1.0 - 0.999f64.powi(adam.t);
            for (i, (xi, gi)) in x.iter_mut().zip(&g).enumerate() {
                for (j, (a, &b)) in xi.iter_mut().zip(gi).enumerate() {
                    let e = i * n + j;
                    adam.m[e] = 0.9 * adam.m[e] + 0.1 * b;
                    adam.v[e] = 0.999 * adam.v[e] + 0.001 * b * b;
                    *a -= cfg.learning_rate * (adam.m[e] / c1) / ((adam.v[e] / c2).sqrt() + 1e-7);
                }
            }
        }
        for xi in x.iter_mut() {
            space.clip(xi);
        }
    }
    if stop == StopReason::NonFinite {
        if let Some(last) = steps.last() {
            x = last.candidates.clone();
        } else {
            x = start.to_vec();
        }
    }
    Ok((x, DescentTrace { steps, stop }))
}

/// Keeps `k` mutually distant points: after per-column min-max scaling,
/// repeatedly drops the point closest to its nearest neighbour (earlier index
/// first on ties). Returns kept indices in ascending order.
pub fn trace_diversity_filter(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let len = points.len();
    if k >= len {
        return (0..len).collect();
    }
    let dim = points.first().map_or(0, Vec::len);
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for j in 0..dim {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let scaled: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            (0..dim)
                .map(|j| if hi[j] > lo[j] { (p[j] - lo[j]) / (hi[j] - lo[j]) } else { 0.0 })
                .collect()
        })
        .collect();
    let dist = |a: usize, b: usize| -> f64 {
        scaled[a].iter().zip(&scaled[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut alive = vec![true; len];
    let nearest = |i: usize, alive: &[bool]| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..len {
            if j != i && alive[j] {
                let d = dist(i, j);
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        best
    };
    let mut nn: Vec<(f64, usize)> = (0..len).map(|i| nearest(i, &alive)).collect();
    let mut remaining = len;
    while remaining > k {
        let mut victim = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..len {
            if alive[i] && (victim == usize::MAX || nn[i].0 < best) {
                victim = i;
                best = nn[i].0;
            }
        }
        alive[victim] = false;
        remaining -= 1;
        for i in 0..len {
            if alive[i] && nn[i].1 == victim {
                nn[i] = nearest(i, &alive);
            }
        }
    }
    (0..len).filter(|&i| alive[i]).collect()
}

/// Picks `k` diverse trace states (by predicted objectives) as extra
/// evaluation candidates. Large traces are thinned to `pool` points by
/// evenly striding over steps first.
pub fn trace_samples(trace: &DescentTrace, k: usize, pool: usize) -> Vec<Vec<f64>> {
    if k == 0 || trace.is_empty() {
        return Vec::new();
    }
    let per_step = trace.steps[0].candidates.len().max(1);
    let total = trace.len() * per_step;
    let stride = total.div_ceil(pool.max(1)).max(1);
    let mut params = Vec::new();
    let mut preds = Vec::new();
    let mut flat = 0usize;
    for s in &trace.steps {
        for (c, o) in s.candidates.iter().zip(&s.objectives) {
            if flat % stride == 0 {
                params.push(c.clone());
                let mut key = o.clone();
                if key.is_empty() {
                    key = c.clone();
                }
                preds.push(key);
            }
            flat += 1;
        }
    }
    trace_diversity_filter(&preds, k).into_iter().map(|i| params[i].clone()).collect()
}

#[cfg(test)]
mod tests;

//! The outer optimization loop: initial design, then per epoch retrain,
//! search on the surrogate, optionally push candidates toward feasibility,
//! and evaluate on the true problem.

mod stop;

use std::collections::HashSet;
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{EpochMetrics, EvaluationRecord, ParameterSpace, ParetoArchive, Population, Provenance, RunHistory};
use crate::error::{Error, Result};
use crate::evaluator::{BatchEvaluator, EvaluationResult, LocalPool};
use crate::feasolve::{self, DescentTrace, FeasolveConfig, TrainingContext};
use crate::metrics::{self, NormalizationContext};
use crate::moea::{self, DistributionIndices, PredictedPoint, RankInfo, VariationConfig, DEFAULT_ETA, ETA_MAX, ETA_MIN};
use crate::problems::{self, ProblemDefinition};
use crate::rng::{RandomStream, StreamRng};
use crate::sampling::{self, Scheme};
use crate::sensitivity::{self, ObjectiveSelector, SensitivityIndices, SensitivityMode};
use crate::surrogate::{self, Differentiable, JointSurrogate, SurrogateConfig, SurrogateMode, TrainingSchedule};

pub use stop::{StopExpression, METRICS as STOP_METRICS};

/// Minimum number of distinct constraint patterns before the constraint
/// head is trained.
pub const MIN_CONSTRAINT_PATTERNS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Surrogate-assisted loop.
    Surrogate,
    /// Plain NSGA-II variation on true-evaluated parents.
    Nsga2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    /// Dimension override for scalable problems.
    pub dim: Option<usize>,
    pub seed: u64,
    pub initial_samples: usize,
    /// Population size; also the number of true evaluations per epoch.
    pub population: usize,
    pub generations: usize,
    /// Fixed budget, or the cap when `stop` is set.
    pub epochs: usize,
    pub stop: Option<String>,
    pub optimizer: Optimizer,
    pub surrogate_mode: SurrogateMode,
    pub surrogate: SurrogateConfig,
    pub use_feasolve: bool,
    pub feasolve: FeasolveConfig,
    pub sensitivity: SensitivityMode,
    /// Distribution index used when sensitivity is off.
    pub eta: f64,
    pub variation: VariationConfig,
    pub sampler: Scheme,
    pub workers: usize,
    /// Splits each epoch into blocks that retrain between them.
    pub sub_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "two_sphere".into(),
            dim: None,
            seed: 0,
            initial_samples: 100,
            population: 100,
            generations: 10,
            epochs: 10,
            stop: None,
            optimizer: Optimizer::Surrogate,
            surrogate_mode: SurrogateMode::Joint,
            surrogate: SurrogateConfig::default(),
            use_feasolve: false,
            feasolve: FeasolveConfig::default(),
            sensitivity: SensitivityMode::Off,
            eta: DEFAULT_ETA,
            variation: VariationConfig::default(),
            sampler: Scheme::Slhc,
            workers: 1,
            sub_iterations: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.initial_samples == 0 {
            return bad("initial_samples must be >= 1".into());
        }
        if self.population == 0 || self.generations == 0 || self.epochs == 0 {
            return bad("population, generations and epochs must be >= 1".into());
        }
        if self.sub_iterations == 0 || self.population % self.sub_iterations != 0 {
            return bad(format!(
                "population {} must be divisible by sub_iterations {}",
                self.population, self.sub_iterations
            ));
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if !(ETA_MIN..=ETA_MAX).contains(&self.eta) {
            return bad(format!("eta must lie in [{ETA_MIN}, {ETA_MAX}]"));
        }
        if self.surrogate_mode == SurrogateMode::Constraints {
            return bad("surrogate_mode `c` cannot rank candidates; use `o` or `c+o`".into());
        }
        let v = &self.variation;
        if !(0.0..=1.0).contains(&v.crossover_prob) || !(0.0..=1.0).contains(&v.crossover_var_prob) {
            return bad("variation probabilities must lie in [0, 1]".into());
        }
        if v.mutation_rate.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
            return bad("variation.mutation_rate must lie in [0, 1]".into());
        }
        if let Some(s) = &self.stop {
            StopExpression::parse(s)?;
        }
        self.surrogate.validate()?;
        self.feasolve.validate()
    }

    pub fn stop_expression(&self) -> Result<Option<StopExpression>> {
        self.stop.as_deref().map(StopExpression::parse).transpose()
    }
}

/// `o` unless the history shows enough distinct constraint patterns to
/// train the classifier.
pub fn select_surrogate_mode(records: &[EvaluationRecord], configured: SurrogateMode) -> SurrogateMode {
    if configured == SurrogateMode::Objectives {
        return configured;
    }
    let patterns: HashSet<&[bool]> = records.iter().map(|r| r.constraints.as_slice()).collect();
    let k = records.first().map_or(0, |r| r.constraints.len());
    if k == 0 || patterns.len() < MIN_CONSTRAINT_PATTERNS {
        SurrogateMode::Objectives
    } else {
        configured
    }
}

/// Everything an epoch produced, handed to the observer before the next
/// epoch starts.
pub struct EpochArtifacts<'a> {
    pub metrics: &'a EpochMetrics,
    /// Records appended this epoch, in evaluation order.
    pub records: &'a [EvaluationRecord],
    /// Evaluator telemetry aligned with `records`.
    pub results: &'a [EvaluationResult],
    /// Surrogate objective predictions made before evaluation, aligned with
    /// `records`.
    pub predicted: &'a [Option<Vec<f64>>],
    pub sensitivity: Option<&'a SensitivityIndices>,
    pub indices: Option<&'a DistributionIndices>,
    pub traces: &'a [DescentTrace],
    pub surrogate: Option<&'a JointSurrogate>,
    pub schedule: Option<&'a TrainingSchedule>,
}

pub trait RunObserver {
    fn on_epoch(&mut self, artifacts: &EpochArtifacts<'_>) -> Result<()>;
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RunObserver for NoObserver {
    fn on_epoch(&mut self, _: &EpochArtifacts<'_>) -> Result<()> {
        Ok(())
    }
}

/// Runs the configured problem on a local worker pool.
pub fn run(config: &RunConfig) -> Result<RunHistory> {
    let problem = problems::by_name(&config.problem, config.dim)?;
    run_with(config, &problem, &LocalPool::new(config.workers), &mut NoObserver)
}

/// Best `m` viable records by constrained rank, cycled when short.
fn true_parents(records: &[EvaluationRecord], m: usize) -> Option<(Vec<Vec<f64>>, Vec<RankInfo>)> {
    let viable: Vec<&EvaluationRecord> = records.iter().filter(|r| r.is_viable()).collect();
    if viable.is_empty() {
        return None;
    }
    let objs: Vec<Vec<f64>> = viable.iter().map(|r| r.objectives.clone()).collect();
    let feas: Vec<bool> = viable.iter().map(|r| r.is_feasible()).collect();
    let order = moea::sorted_order(&moea::rank(&objs, &feas));
    let pick: Vec<usize> = order.iter().copied().cycle().take(m).collect();
    let parents: Vec<Vec<f64>> = pick.iter().map(|&i| viable[i].params.clone()).collect();
    let p_objs: Vec<Vec<f64>> = pick.iter().map(|&i| objs[i].clone()).collect();
    let p_feas: Vec<bool> = pick.iter().map(|&i| feas[i]).collect();
    Some((parents, moea::rank(&p_objs, &p_feas)))
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Perturbs exact repeats of already evaluated (or already chosen) points.
fn dedupe(
    candidates: &mut [Vec<f64>],
    seen: &mut HashSet<Vec<u64>>,
    space: &ParameterSpace,
    eta: f64,
    rng: &mut StreamRng,
) {
    let indices = DistributionIndices::uniform(space.dim(), eta);
    let mut repeats = 0;
    for c in candidates.iter_mut() {
        let mut tries = 0;
        repeats += usize::from(seen.contains(&key(c)));
        while seen.contains(&key(c)) && tries < 20 {
            *c = moea::polynomial_mutation(c, &indices, 1.0, space, rng);
            tries += 1;
        }
        seen.insert(key(c));
    }
    if repeats > 0 {
        log::debug!("perturbed {repeats} repeated candidates");
    }
}

fn fronts_hv(fronts: &[Vec<Vec<f64>>], q: usize) -> Vec<f64> {
    metrics::normalized_hypervolume(fronts, q).unwrap_or_else(|e| {
        log::warn!("hypervolume unavailable: {e}");
        vec![f64::NAN; fronts.len()]
    })
}

/// Additive epsilon of the previous archive against the current one, both
/// normalized under the nadir of every archive so far.
pub fn epsilon_convergence(fronts: &[Vec<Vec<f64>>], q: usize) -> f64 {
    let [.., prev, cur] = fronts else {
        return f64::NAN;
    };
    let Some(ctx) = NormalizationContext::from_points(fronts.iter().flatten(), q) else {
        return f64::NAN;
    };
    let norm = |f: &Vec<Vec<f64>>| f.iter().map(|p| ctx.normalize(p)).collect::<Vec<_>>();
    metrics::epsilon_additive(&norm(prev), &norm(cur))
}

/// Leaves the leading `⌈M/2⌉` candidates untouched and runs feasibility
/// descent on the rest.
pub fn hybrid_feasolve<M: Differentiable>(
    candidates: &[Vec<f64>],
    model: &M,
    cfg: &FeasolveConfig,
    ctx: &TrainingContext<'_>,
) -> Result<(Vec<Vec<f64>>, DescentTrace)> {
    let split = feasolve::hybrid_split(candidates.len());
    let (solved, trace) = feasolve::make_feasible(&candidates[split..], model, cfg, ctx)?;
    let mut out = candidates[..split].to_vec();
    out.extend(solved);
    Ok((out, trace))
}

struct Block {
    candidates: Vec<Vec<f64>>,
    provenance: Vec<Provenance>,
    predicted: Vec<Option<Vec<f64>>>,
    traces: Vec<DescentTrace>,
    feasolve_steps: usize,
}

/// One block of candidates from the surrogate, or `None` when training fails.
#[allow(clippy::too_many_arguments)]
fn surrogate_block(
    config: &RunConfig,
    problem: &ProblemDefinition,
    records: &[EvaluationRecord],
    count: usize,
    stream: &RandomStream,
    seen: &mut HashSet<Vec<u64>>,
    out: &mut EpochState,
) -> Result<Option<Block>> {
    let space = &problem.space;
    let mode = select_surrogate_mode(records, config.surrogate_mode);
    let (model, schedule) = match surrogate::train(
        records,
        space,
        problem.objectives,
        problem.constraints,
        mode,
        &config.surrogate,
        &stream.derive("train"),
    ) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("surrogate training failed ({e}); falling back to NSGA-II variation");
            return Ok(None);
        }
    };
    let (train_x, train_y, _) = surrogate::training_rows(records, &config.surrogate, problem.objectives);
    let indices = match config.sensitivity {
        SensitivityMode::Off => DistributionIndices::uniform(space.dim(), config.eta),
        m => {
            let s = sensitivity::compute_elasticities(&model, &train_x, ObjectiveSelector::Mean);
            let eta = sensitivity::indices_from_sensitivity(&s);
            out.sensitivity = Some(s);
            if m == SensitivityMode::Inverted {
                sensitivity::invert_indices(&eta)
            } else {
                eta
            }
        }
    };
    let start = match true_parents(records, config.population) {
        Some((p, _)) => p,
        None => sampling::sample_mc(space, config.population, &stream.derive("restart"))?.points,
    };
    let predictor = |xs: &[Vec<f64>]| -> Vec<PredictedPoint> {
        let p = model.predict(xs);
        (0..xs.len())
            .map(|i| PredictedPoint {
                objectives: p.objectives[i].clone(),
                feasibility: p.feasibility.get(i).cloned().unwrap_or_default(),
            })
            .collect()
    };
    let mut rng = stream.derive("moea").rng();
    let ranked = moea::generate(
        &Population::new(start),
        &predictor,
        space,
        config.generations,
        &indices,
        &config.variation,
        &mut rng,
    )?;
    let mut candidates: Vec<Vec<f64>> = ranked.members.into_iter().take(count).collect();
    dedupe(&mut candidates, seen, space, config.eta, &mut stream.derive("dedupe").rng());
    let mut provenance = vec![Provenance::Moea; candidates.len()];
    let mut traces = Vec::new();
    let mut feasolve_steps = 0;
    if config.use_feasolve {
        let ctx = TrainingContext::new(&train_x, &train_y, model.objective_count());
        let (solved, trace) = hybrid_feasolve(&candidates, &model, &config.feasolve, &ctx)?;
        feasolve_steps = trace.len();
        let split = feasolve::hybrid_split(candidates.len());
        for p in provenance[split..].iter_mut() {
            *p = Provenance::Feasolve;
        }
        candidates = solved;
        let extra = feasolve::trace_samples(&trace, config.feasolve.trace_samples, config.feasolve.trace_pool);
        provenance.extend(std::iter::repeat_n(Provenance::Trace, extra.len()));
        candidates.extend(extra);
        traces.push(trace);
    }
    let predicted = if model.objective_count() > 0 {
        model.predict(&candidates).objectives.into_iter().map(Some).collect()
    } else {
        vec![None; candidates.len()]
    };
    out.indices = Some(indices);
    out.schedule = Some(schedule);
    out.surrogate = Some(model);
    out.mode = Some(mode.as_str().to_string());
    Ok(Some(Block {
        candidates,
        provenance,
        predicted,
        traces,
        feasolve_steps,
    }))
}

fn variation_block(
    config: &RunConfig,
    problem: &ProblemDefinition,
    records: &[EvaluationRecord],
    count: usize,
    stream: &RandomStream,
    seen: &mut HashSet<Vec<u64>>,
) -> Result<Block> {
    let space = &problem.space;
    let mut candidates = match true_parents(records, config.population) {
        Some((parents, info)) => {
            let indices = DistributionIndices::uniform(space.dim(), config.eta);
            let mut rng = stream.derive("variation").rng();
            moea::make_offspring(&parents, &info, count, &indices, space, &config.variation, &mut rng)
        }
        None => sampling::sample_mc(space, count, &stream.derive("restart"))?.points,
    };
    dedupe(&mut candidates, seen, space, config.eta, &mut stream.derive("dedupe").rng());
    Ok(Block {
        provenance: vec![Provenance::Moea; candidates.len()],
        predicted: vec![None; candidates.len()],
        candidates,
        traces: Vec::new(),
        feasolve_steps: 0,
    })
}

#[derive(Default)]
struct EpochState {
    mode: Option<String>,
    sensitivity: Option<SensitivityIndices>,
    indices: Option<DistributionIndices>,
    surrogate: Option<JointSurrogate>,
    schedule: Option<TrainingSchedule>,
}

fn to_records(results: &[EvaluationResult], candidates: &[Vec<f64>], provenance: &[Provenance], epoch: usize) -> Vec<EvaluationRecord> {
    results
        .iter()
        .map(|r| EvaluationRecord {
            params: candidates[r.index].clone(),
            objectives: r.objectives.clone(),
            constraints: r.constraints.clone(),
            epoch,
            provenance: provenance[r.index],
        })
        .collect()
}

/// Runs the loop against `problem`, evaluating through `evaluator` and
/// reporting each epoch to `observer`.
pub fn run_with(
    config: &RunConfig,
    problem: &ProblemDefinition,
    evaluator: &dyn BatchEvaluator,
    observer: &mut dyn RunObserver,
) -> Result<RunHistory> {
    config.validate()?;
    let stop = config.stop_expression()?;
    let space = &problem.space;
    let q = problem.objectives;
    let root = RandomStream::new(config.seed, "run");
    let mut history = RunHistory::new();
    let mut archive = ParetoArchive::new();
    let mut fronts: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut batch = 0u64;

    let started = Instant::now();
    let design = sampling::sample(space, config.initial_samples, config.sampler, &root.derive("init"))?;
    for p in &design.points {
        seen.insert(key(p));
    }
    let results = evaluator.evaluate_batch(problem, batch, &design.points);
    batch += 1;
    let provenance = vec![Provenance::Init; design.points.len()];
    let new = to_records(&results, &design.points, &provenance, 0);
    for r in &new {
        archive.insert(r.clone());
        history.push(r.clone())?;
    }
    fronts.push(archive.objectives());
    let m0 = EpochMetrics {
        epoch: 0,
        cumulative_evals: history.len(),
        hv_norm: *fronts_hv(&fronts, q).last().unwrap_or(&f64::NAN),
        feasible_count: history.feasible_count(),
        nrmse: f64::NAN,
        mode: "init".into(),
        feasolve_steps: 0,
        wall_seconds: started.elapsed().as_secs_f64(),
        ecov: f64::NAN,
    };
    history.push_metrics(m0.clone())?;
    observer.on_epoch(&EpochArtifacts {
        metrics: &m0,
        records: &new,
        results: &results,
        predicted: &vec![None; new.len()],
        sensitivity: None,
        indices: None,
        traces: &[],
        surrogate: None,
        schedule: None,
    })?;

    let block_size = config.population / config.sub_iterations;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut state = EpochState::default();
        let mut epoch_records = Vec::new();
        let mut epoch_results = Vec::new();
        let mut epoch_predicted = Vec::new();
        let mut epoch_traces = Vec::new();
        let mut feasolve_steps = 0;
        let mut fell_back = false;
        for sub in 0..config.sub_iterations {
            let stream = root.derive(format!("epoch{epoch}/block{sub}"));
            let records = history.records();
            let block = match config.optimizer {
                Optimizer::Nsga2 => variation_block(config, problem, records, block_size, &stream, &mut seen)?,
                Optimizer::Surrogate => {
                    match surrogate_block(config, problem, records, block_size, &stream, &mut seen, &mut state)? {
                        Some(b) => b,
                        None => {
                            fell_back = true;
                            variation_block(config, problem, records, block_size, &stream, &mut seen)?
                        }
                    }
                }
            };
            for c in &block.candidates {
                seen.insert(key(c));
            }
            let results = evaluator.evaluate_batch(problem, batch, &block.candidates);
            batch += 1;
            let new = to_records(&results, &block.candidates, &block.provenance, epoch);
            for r in &new {
                archive.insert(r.clone());
                history.push(r.clone())?;
            }
            epoch_records.extend(new);
            epoch_results.extend(results);
            epoch_predicted.extend(block.predicted);
            epoch_traces.extend(block.traces);
            feasolve_steps += block.feasolve_steps;
        }
        fronts.push(archive.objectives());
        let (truth, pred): (Vec<Vec<f64>>, Vec<Vec<f64>>) = epoch_records
            .iter()
            .zip(&epoch_predicted)
            .filter_map(|(r, p)| match p {
                Some(p) if r.objectives.iter().all(|v| v.is_finite()) => Some((r.objectives.clone(), p.clone())),
                _ => None,
            })
            .unzip();
        let mode = match config.optimizer {
            Optimizer::Nsga2 => "nsga2".to_string(),
            Optimizer::Surrogate if fell_back => "fallback".to_string(),
            Optimizer::Surrogate => state.mode.clone().unwrap_or_default(),
        };
        let m = EpochMetrics {
            epoch,
            cumulative_evals: history.len(),
            hv_norm: *fronts_hv(&fronts, q).last().unwrap_or(&f64::NAN),
            feasible_count: history.feasible_count(),
            nrmse: metrics::nrmse(&truth, &pred).unwrap_or(f64::NAN),
            mode,
            feasolve_steps,
            wall_seconds: started.elapsed().as_secs_f64(),
            ecov: epsilon_convergence(&fronts, q),
        };
        history.push_metrics(m.clone())?;
        observer.on_epoch(&EpochArtifacts {
            metrics: &m,
            records: &epoch_records,
            results: &epoch_results,
            predicted: &epoch_predicted,
            sensitivity: state.sensitivity.as_ref(),
            indices: state.indices.as_ref(),
            traces: &epoch_traces,
            surrogate: state.surrogate.as_ref(),
            schedule: state.schedule.as_ref(),
        })?;
        if stop.as_ref().is_some_and(|s| s.evaluate(history.epoch_metrics())) {
            log::info!("stop condition met after epoch {epoch}");
            break;
        }
    }
    // Live HV used the nadir known at the time; the stored series uses the
    // whole run so it is comparable across epochs.
    let hv = fronts_hv(&fronts, q);
    history.set_hv_series(&hv);
    Ok(history)
}

/// HV series for a finished history under its own whole-run nadir.
pub fn hv_series(history: &RunHistory, q: usize) -> Vec<f64> {
    let fronts: Vec<Vec<Vec<f64>>> = history
        .epoch_metrics()
        .iter()
        .map(|m| history.archive_up_to(m.epoch).objectives())
        .collect();
    fronts_hv(&fronts, q)
}

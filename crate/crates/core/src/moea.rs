//! NSGA-II building blocks and a surrogate-driven generation loop.
//!
//! Operators follow the canonical definitions of Deb et al.: fast
//! non-dominated sorting, crowding distance, binary tournament with
//! feasibility-first comparison, simulated binary crossover and bounded
//! polynomial mutation. Distribution indices are per dimension so that
//! sensitivity information can shape the search.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{dominates_unchecked, ParameterSpace, Population};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const ETA_MIN: f64 = 1.0;
pub const ETA_MAX: f64 = 30.0;
pub const DEFAULT_ETA: f64 = 20.0;

/// Per-dimension SBX and polynomial-mutation distribution indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionIndices {
    pub cross: Vec<f64>,
    pub mutation: Vec<f64>,
}

impl DistributionIndices {
    pub fn new(cross: Vec<f64>, mutation: Vec<f64>) -> Result<Self> {
        if cross.len() != mutation.len() {
            return Err(Error::DimensionMismatch {
                expected: cross.len(),
                got: mutation.len(),
            });
        }
        if let Some(bad) = cross
            .iter()
            .chain(&mutation)
            .find(|e| !(ETA_MIN..=ETA_MAX).contains(*e))
        {
            return Err(Error::InvalidConfig(format!(
                "distribution index {bad} outside [{ETA_MIN}, {ETA_MAX}]"
            )));
        }
        Ok(Self { cross, mutation })
    }

    pub fn uniform(n: usize, eta: f64) -> Self {
        Self {
            cross: vec![eta; n],
            mutation: vec![eta; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.cross.len()
    }
}

/// Fronts `F_0, F_1, ...` as index lists into `objs`.
pub fn fast_nondominated_sort(objs: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    if objs.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::NanObjective);
    }
    let n = objs.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates_unchecked(&objs[i], &objs[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates_unchecked(&objs[j], &objs[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    Ok(fronts)
}

/// Crowding distance of each point within one front.
pub fn crowding_distance(front: &[Vec<f64>]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let q = front[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..q {
        order.sort_by(|&a, &b| front[a][m].total_cmp(&front[b][m]).then(a.cmp(&b)));
        let lo = front[order[0]][m];
        let hi = front[order[n - 1]][m];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let i = order[w];
            if dist[i].is_finite() {
                dist[i] += (front[order[w + 1]][m] - front[order[w - 1]][m]) / range;
            }
        }
    }
    dist
}

/// Rank information used by selection and truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankInfo {
    pub feasible: bool,
    pub front: usize,
    pub crowding: f64,
}

/// Strict "better than" under feasibility first, then front, then crowding.
fn better(a: &RankInfo, b: &RankInfo) -> Ordering {
    b.feasible
        .cmp(&a.feasible)
        .then(a.front.cmp(&b.front))
        .then(b.crowding.total_cmp(&a.crowding))
}

/// Assigns fronts and crowding with feasible members ranked ahead of
/// infeasible ones. Members with NaN objectives share the worst front.
pub fn rank(objectives: &[Vec<f64>], feasible: &[bool]) -> Vec<RankInfo> {
    let n = objectives.len();
    let mut info = vec![
        RankInfo {
            feasible: false,
            front: usize::MAX,
            crowding: 0.0,
        };
        n
    ];
    let viable: Vec<bool> = objectives
        .iter()
        .map(|o| o.iter().all(|v| v.is_finite()))
        .collect();
    let mut offset = 0;
    for group_feasible in [true, false] {
        let idx: Vec<usize> = (0..n)
            .filter(|&i| viable[i] && feasible[i] == group_feasible)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let objs: Vec<Vec<f64>> = idx.iter().map(|&i| objectives[i].clone()).collect();
        let fronts = fast_nondominated_sort(&objs).expect("finite objectives");
        for (f, members) in fronts.iter().enumerate() {
            let pts: Vec<Vec<f64>> = members.iter().map(|&k| objs[k].clone()).collect();
            let cd = crowding_distance(&pts);
            for (k, &m) in members.iter().enumerate() {
                info[idx[m]] = RankInfo {
                    feasible: group_feasible,
                    front: offset + f,
                    crowding: cd[k],
                };
            }
        }
        offset += fronts.len();
    }
    for (i, v) in viable.iter().enumerate() {
        if !v {
            info[i] = RankInfo {
                feasible: false,
                front: offset,
                crowding: 0.0,
            };
        }
    }
    info
}

/// Indices sorted best first.
pub fn sorted_order(info: &[RankInfo]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..info.len()).collect();
    order.sort_by(|&a, &b| better(&info[a], &info[b]).then(a.cmp(&b)));
    order
}

/// Binary tournament. Returns `true` when `a` wins.
pub fn constrained_tournament(a: &RankInfo, b: &RankInfo, rng: &mut impl Rng) -> bool {
    match better(a, b) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => rng.random::<bool>(),
    }
}

/// SBX spread factor for a uniform draw `u`.
pub fn sbx_beta(u: f64, eta: f64) -> f64 {
    let e = 1.0 / (eta + 1.0);
    if u <= 0.5 {
        (2.0 * u).powf(e)
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(e)
    }
}

/// Children of one coordinate pair for spread factor `beta`.
pub fn sbx_children(p1: f64, p2: f64, beta: f64) -> (f64, f64) {
    (
        0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2),
        0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2),
    )
}

/// Polynomial-mutation step, as a fraction of the dimension's width.
pub fn polynomial_delta(u: f64, eta: f64) -> f64 {
    let e = 1.0 / (eta + 1.0);
    if u < 0.5 {
        (2.0 * u).powf(e) - 1.0
    } else {
        1.0 - (2.0 * (1.0 - u)).powf(e)
    }
}

/// Variation settings. Defaults are the canonical NSGA-II values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationConfig {
    pub crossover_prob: f64,
    /// Probability that a given coordinate participates in crossover.
    pub crossover_var_prob: f64,
    /// Per-coordinate mutation probability; `None` means `1/n`.
    pub mutation_rate: Option<f64>,
}

impl Default for VariationConfig {
    fn default() -> Self {
        Self {
            crossover_prob: 0.9,
            crossover_var_prob: 0.5,
            mutation_rate: None,
        }
    }
}

pub fn sbx_crossover(
    p1: &[f64],
    p2: &[f64],
    indices: &DistributionIndices,
    space: &ParameterSpace,
    var_prob: f64,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    for j in 0..p1.len() {
        if rng.random::<f64>() >= var_prob || (p1[j] - p2[j]).abs() <= 1e-14 {
            continue;
        }
        let u: f64 = rng.random();
        let (a, b) = sbx_children(p1[j], p2[j], sbx_beta(u, indices.cross[j]));
        c1[j] = a;
        c2[j] = b;
    }
    space.clip(&mut c1);
    space.clip(&mut c2);
    (c1, c2)
}

pub fn polynomial_mutation(
    p: &[f64],
    indices: &DistributionIndices,
    rate: f64,
    space: &ParameterSpace,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut x = p.to_vec();
    for j in 0..x.len() {
        if rng.random::<f64>() >= rate {
            continue;
        }
        let u: f64 = rng.random();
        x[j] += polynomial_delta(u, indices.mutation[j]) * space.width(j);
    }
    space.clip(&mut x);
    x
}

/// Produces `count` offspring by tournament selection, SBX and mutation.
pub fn make_offspring(
    parents: &[Vec<f64>],
    info: &[RankInfo],
    count: usize,
    indices: &DistributionIndices,
    space: &ParameterSpace,
    cfg: &VariationConfig,
    rng: &mut StreamRng,
) -> Vec<Vec<f64>> {
    let n = space.dim();
    let rate = cfg.mutation_rate.unwrap_or(1.0 / n as f64);
    let pick = |rng: &mut StreamRng| {
        let a = rng.random_range(0..parents.len());
        let b = rng.random_range(0..parents.len());
        if constrained_tournament(&info[a], &info[b], rng) {
            a
        } else {
            b
        }
    };
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = pick(rng);
        let j = pick(rng);
        let (c1, c2) = if rng.random::<f64>() < cfg.crossover_prob {
            sbx_crossover(&parents[i], &parents[j], indices, space, cfg.crossover_var_prob, rng)
        } else {
            (parents[i].clone(), parents[j].clone())
        };
        for c in [c1, c2] {
            if out.len() < count {
                out.push(polynomial_mutation(&c, indices, rate, space, rng));
            }
        }
    }
    out
}

/// Surrogate-side prediction for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedPoint {
    pub objectives: Vec<f64>,
    /// Constraint satisfaction probabilities; empty when the model has no
    /// constraint head.
    pub feasibility: Vec<f64>,
}

impl PredictedPoint {
    pub fn predicted_feasible(&self) -> bool {
        self.feasibility.iter().all(|&p| p >= 0.5)
    }
}

/// Anything that can score a batch of candidates, in order.
pub trait Predictor {
    fn predict_points(&self, xs: &[Vec<f64>]) -> Vec<PredictedPoint>;
}

impl<F> Predictor for F
where
    F: Fn(&[Vec<f64>]) -> Vec<PredictedPoint>,
{
    fn predict_points(&self, xs: &[Vec<f64>]) -> Vec<PredictedPoint> {
        self(xs)
    }
}

/// Population sorted best first, with the predictions it was ranked on.
#[derive(Debug, Clone)]
pub struct RankedPopulation {
    pub members: Vec<Vec<f64>>,
    pub predictions: Vec<PredictedPoint>,
    pub info: Vec<RankInfo>,
}

impl RankedPopulation {
    pub fn from_scored(members: Vec<Vec<f64>>, predictions: Vec<PredictedPoint>) -> Self {
        let objs: Vec<Vec<f64>> = predictions.iter().map(|p| p.objectives.clone()).collect();
        let feas: Vec<bool> = predictions.iter().map(|p| p.predicted_feasible()).collect();
        let info = rank(&objs, &feas);
        let order = sorted_order(&info);
        Self {
            members: order.iter().map(|&i| members[i].clone()).collect(),
            predictions: order.iter().map(|&i| predictions[i].clone()).collect(),
            info: order.iter().map(|&i| info[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn population(&self) -> Population {
        Population::new(self.members.clone())
    }
}

/// Runs `generations` elitist NSGA-II generations scored entirely by
/// `predictor`. The returned population has the size of `pop`.
pub fn generate(
    pop: &Population,
    predictor: &dyn Predictor,
    space: &ParameterSpace,
    generations: usize,
    indices: &DistributionIndices,
    cfg: &VariationConfig,
    rng: &mut StreamRng,
) -> Result<RankedPopulation> {
    if generations == 0 {
        return Err(Error::InvalidConfig("at least one generation is required".into()));
    }
    if pop.is_empty() {
        return Err(Error::InvalidConfig("empty population".into()));
    }
    if indices.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: indices.dim(),
        });
    }
    let size = pop.len();
    let mut current = RankedPopulation::from_scored(
        pop.members.clone(),
        predictor.predict_points(&pop.members),
    );
    for _ in 0..generations {
        let offspring = make_offspring(&current.members, &current.info, size, indices, space, cfg, rng);
        let scored = predictor.predict_points(&offspring);
        let mut members = current.members.clone();
        members.extend(offspring);
        let mut preds = current.predictions.clone();
        preds.extend(scored);
        let merged = RankedPopulation::from_scored(members, preds);
        current = RankedPopulation {
            members: merged.members[..size].to_vec(),
            predictions: merged.predictions[..size].to_vec(),
            info: merged.info[..size].to_vec(),
        };
        // Crowding must reflect the survivors only.
        current = RankedPopulation::from_scored(current.members, current.predictions);
    }
    Ok(current)
}

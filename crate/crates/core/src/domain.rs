//! Domain types shared by every stage of the optimizer.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounded box `[lower, upper]` in `n` named dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterSpace {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidSpace("at least one dimension is required".into()));
        }
        if names.len() != lower.len() || names.len() != upper.len() {
            return Err(Error::InvalidSpace(format!(
                "{} names, {} lower bounds, {} upper bounds",
                names.len(),
                lower.len(),
                upper.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate dimension name `{name}`")));
            }
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidSpace(format!(
                    "dimension `{}` has bounds [{lo}, {hi}]",
                    names[j]
                )));
            }
        }
        Ok(Self { names, lower, upper })
    }

    /// Box with dimensions named `x1..xn`.
    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(
            (1..=n).map(|i| format!("x{i}")).collect(),
            vec![lower; n],
            vec![upper; n],
        )
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
    }

    /// Bounds normalization onto the unit box.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.lower[j]) / self.width(j))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, v)| self.lower[j] + v * self.width(j))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

/// True iff every constraint flag is satisfied. An empty vector is feasible.
pub fn is_feasible(flags: &[bool]) -> bool {
    flags.iter().all(|&c| c)
}

/// Pareto dominance for minimization: `a` is no worse everywhere and strictly
/// better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NanObjective);
    }
    Ok(dominates_unchecked(a, b))
}

/// [`dominates`] without the NaN and length checks.
#[inline]
pub fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Where an evaluated point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Init,
    Moea,
    Feasolve,
    Trace,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Init => "init",
            Provenance::Moea => "moea",
            Provenance::Feasolve => "feasolve",
            Provenance::Trace => "trace",
        };
        f.write_str(s)
    }
}

/// One true evaluation of the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub params: Vec<f64>,
    /// NaN entries mark a non-viable evaluation.
    pub objectives: Vec<f64>,
    pub constraints: Vec<bool>,
    pub epoch: usize,
    pub provenance: Provenance,
}

impl EvaluationRecord {
    pub fn is_viable(&self) -> bool {
        self.objectives.iter().all(|v| !v.is_nan())
    }

    pub fn is_feasible(&self) -> bool {
        is_feasible(&self.constraints)
    }

    /// Viable and feasible: eligible for archives and metrics.
    pub fn is_usable_feasible(&self) -> bool {
        self.is_viable() && self.is_feasible()
    }

    pub fn constraint_pattern(&self) -> Vec<bool> {
        self.constraints.clone()
    }
}

/// Ordered candidate set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Population {
    pub members: Vec<Vec<f64>>,
}

impl Population {
    pub fn new(members: Vec<Vec<f64>>) -> Self {
        Self { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Result of [`ParetoArchive::insert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Added { removed: usize },
    Dominated,
    Infeasible,
    NonViable,
}

/// Feasible, mutually non-dominated records.
#[derive(Debug, Clone, Default)]
pub struct ParetoArchive {
    records: Vec<EvaluationRecord>,
}

impl ParetoArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EvaluationRecord>) -> Self {
        let mut archive = Self::new();
        for r in records {
            archive.insert(r.clone());
        }
        archive
    }

    pub fn insert(&mut self, rec: EvaluationRecord) -> InsertOutcome {
        if !rec.is_viable() {
            return InsertOutcome::NonViable;
        }
        if !rec.is_feasible() {
            return InsertOutcome::Infeasible;
        }
        if self
            .records
            .iter()
            .any(|m| dominates_unchecked(&m.objectives, &rec.objectives))
        {
            return InsertOutcome::Dominated;
        }
        let before = self.records.len();
        self.records
            .retain(|m| !dominates_unchecked(&rec.objectives, &m.objectives));
        let removed = before - self.records.len();
        self.records.push(rec);
        InsertOutcome::Added { removed }
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objectives(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.objectives.clone()).collect()
    }
}

/// Per-epoch snapshot kept alongside the evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub cumulative_evals: usize,
    pub hv_norm: f64,
    pub feasible_count: usize,
    /// Surrogate error on this epoch's new evaluations; NaN when unavailable.
    pub nrmse: f64,
    pub mode: String,
    pub feasolve_steps: usize,
    pub wall_seconds: f64,
    /// Additive epsilon of the previous archive against the current one.
    pub ecov: f64,
}

/// Append-only log of evaluations and epoch snapshots.
#[derive(Debug, Clone, Default)]
pub struct RunHistory {
    records: Vec<EvaluationRecord>,
    epoch_metrics: Vec<EpochMetrics>,
}

impl RunHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record. Records must arrive in nondecreasing epoch order.
    pub fn push(&mut self, rec: EvaluationRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.epoch < last.epoch {
                return Err(Error::InvalidConfig(format!(
                    "record for epoch {} appended after epoch {}",
                    rec.epoch, last.epoch
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn push_metrics(&mut self, m: EpochMetrics) -> Result<()> {
        if let Some(last) = self.epoch_metrics.last() {
            if m.epoch <= last.epoch {
                return Err(Error::InvalidConfig(format!(
                    "metrics for epoch {} appended after epoch {}",
                    m.epoch, last.epoch
                )));
            }
        }
        self.epoch_metrics.push(m);
        Ok(())
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn epoch_metrics(&self) -> &[EpochMetrics] {
        &self.epoch_metrics
    }

    /// Replaces the HV column once the final nadir is known.
    pub(crate) fn set_hv_series(&mut self, hv: &[f64]) {
        for (m, v) in self.epoch_metrics.iter_mut().zip(hv) {
            m.hv_norm = *v;
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of completed optimization epochs (the initial design is epoch 0).
    pub fn iteration(&self) -> usize {
        self.epoch_metrics.last().map_or(0, |m| m.epoch)
    }

    pub fn archive(&self) -> ParetoArchive {
        ParetoArchive::from_records(&self.records)
    }

    pub fn archive_up_to(&self, epoch: usize) -> ParetoArchive {
        ParetoArchive::from_records(self.records.iter().filter(|r| r.epoch <= epoch))
    }

    pub fn feasible_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_usable_feasible()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(obj: &[f64], feasible: bool) -> EvaluationRecord {
        EvaluationRecord {
            params: obj.to_vec(),
            objectives: obj.to_vec(),
            constraints: vec![feasible],
            epoch: 0,
            provenance: Provenance::Init,
        }
    }

    fn objs(a: &ParetoArchive) -> Vec<Vec<f64>> {
        let mut v = a.objectives();
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        v
    }

    #[test]
    fn feasibility_product() {
        assert!(is_feasible(&[true, true, true]));
        assert!(!is_feasible(&[true, false, true]));
        assert!(is_feasible(&[]));
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[0.0, 0.0], &[1.0, 1.0]).unwrap());
        assert!(!dominates(&[0.0, 1.0], &[1.0, 0.0]).unwrap());
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]).unwrap());
        assert!(matches!(
            dominates(&[f64::NAN, 0.0], &[1.0, 1.0]),
            Err(Error::NanObjective)
        ));
    }

    #[test]
    fn archive_examples() {
        let mut a = ParetoArchive::new();
        a.insert(rec(&[1.0, 1.0], true));
        assert_eq!(a.insert(rec(&[0.0, 0.0], true)), InsertOutcome::Added { removed: 1 });
        assert_eq!(objs(&a), vec![vec![0.0, 0.0]]);
        assert_eq!(a.insert(rec(&[1.0, 1.0], true)), InsertOutcome::Dominated);
        assert_eq!(a.len(), 1);

        let mut b = ParetoArchive::new();
        b.insert(rec(&[0.0, 1.0], true));
        b.insert(rec(&[1.0, 0.0], true));
        b.insert(rec(&[0.5, 0.5], true));
        assert_eq!(b.len(), 3);
        assert_eq!(b.insert(rec(&[0.2, 0.2], false)), InsertOutcome::Infeasible);
        assert_eq!(b.insert(rec(&[f64::NAN, 0.2], true)), InsertOutcome::NonViable);
    }

    #[test]
    fn equal_objectives_from_distinct_params_are_kept() {
        let mut a = ParetoArchive::new();
        let mut r1 = rec(&[0.5, 0.5], true);
        r1.params = vec![1.0];
        let mut r2 = rec(&[0.5, 0.5], true);
        r2.params = vec![2.0];
        a.insert(r1);
        assert_eq!(a.insert(r2), InsertOutcome::Added { removed: 0 });
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn space_validation() {
        assert!(ParameterSpace::uniform(0, 0.0, 1.0).is_err());
        assert!(ParameterSpace::uniform(2, 1.0, 1.0).is_err());
        assert!(ParameterSpace::new(
            vec!["a".into(), "a".into()],
            vec![0.0, 0.0],
            vec![1.0, 1.0]
        )
        .is_err());
        let s = ParameterSpace::new(vec!["a".into()], vec![0.0], vec![4.0]).unwrap();
        assert_eq!(s.normalize(&[1.0]), vec![0.25]);
        assert_eq!(s.normalize(&[0.0]), vec![0.0]);
        assert_eq!(s.normalize(&[4.0]), vec![1.0]);
    }

    #[test]
    fn history_is_epoch_monotone() {
        let mut h = RunHistory::new();
        let mut r = rec(&[1.0], true);
        r.epoch = 2;
        h.push(r.clone()).unwrap();
        r.epoch = 1;
        assert!(h.push(r).is_err());
    }

    fn brute_force_front(points: &[(Vec<f64>, bool)]) -> Vec<Vec<f64>> {
        let feasible: Vec<&Vec<f64>> = points.iter().filter(|p| p.1).map(|p| &p.0).collect();
        let mut front: Vec<Vec<f64>> = Vec::new();
        for (i, p) in feasible.iter().enumerate() {
            let dominated = feasible.iter().any(|q| dominates_unchecked(q, p));
            // duplicates of an earlier point collapse to one entry only if they
            // share params; here params == objectives, so keep the first copy.
            let dup = feasible[..i].iter().any(|q| *q == *p);
            if !dominated && !dup {
                front.push((*p).clone());
            }
        }
        front.sort_by(|x, y| x.partial_cmp(y).unwrap());
        front
    }

    proptest! {
        #[test]
        fn archive_matches_brute_force(
            pts in prop::collection::vec(
                (prop::collection::vec(0u8..6, 3), any::<bool>()), 1..40)
        ) {
            let points: Vec<(Vec<f64>, bool)> = pts
                .into_iter()
                .map(|(v, f)| (v.into_iter().map(f64::from).collect(), f))
                .collect();
            let mut archive = ParetoArchive::new();
            for (p, f) in &points {
                // identical params and objectives: skip exact duplicates like the oracle
                if archive.records().iter().any(|r| &r.objectives == p) {
                    continue;
                }
                archive.insert(rec(p, *f));
            }
            prop_assert_eq!(objs(&archive), brute_force_front(&points));
            for a in archive.records() {
                for b in archive.records() {
                    prop_assert!(!dominates_unchecked(&a.objectives, &b.objectives));
                }
            }
        }

        #[test]
        fn dominance_irreflexive_and_transitive(
            a in prop::collection::vec(0u8..4, 3),
            b in prop::collection::vec(0u8..4, 3),
            c in prop::collection::vec(0u8..4, 3),
        ) {
            let f = |v: Vec<u8>| v.into_iter().map(f64::from).collect::<Vec<_>>();
            let (a, b, c) = (f(a), f(b), f(c));
            prop_assert!(!dominates_unchecked(&a, &a));
            if dominates_unchecked(&a, &b) && dominates_unchecked(&b, &c) {
                prop_assert!(dominates_unchecked(&a, &c));
            }
        }
    }
}

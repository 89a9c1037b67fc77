//! Controller/worker evaluation of candidate batches.
//!
//! Requests fan out to workers and results are collected by candidate index,
//! so ordering and values never depend on scheduling.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use web_time::Instant;

use crate::problems::{Outcome, ProblemDefinition};

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRequest {
    pub batch: u64,
    pub index: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub batch: u64,
    pub index: usize,
    pub objectives: Vec<f64>,
    pub constraints: Vec<bool>,
    pub wall_seconds: f64,
    pub worker: usize,
    pub attempts: u32,
    pub error: Option<String>,
}

/// Anything that can evaluate an indexed batch and return results in
/// request order.
pub trait BatchEvaluator: Send + Sync {
    fn evaluate_batch(&self, problem: &ProblemDefinition, batch: u64, points: &[Vec<f64>]) -> Vec<EvaluationResult>;
}

/// In-process worker pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalPool {
    workers: usize,
}

impl LocalPool {
    pub fn new(workers: usize) -> Self {
        Self {
            workers: workers.max(1),
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "evaluation panicked".to_string()
    }
}

fn run_one(problem: &ProblemDefinition, req: &EvaluationRequest, worker: usize) -> EvaluationResult {
    let start = Instant::now();
    let mut attempts = 0;
    let mut last_error = String::new();
    while attempts < 2 {
        attempts += 1;
        match catch_unwind(AssertUnwindSafe(|| problem.evaluate(&req.params))) {
            Ok(Outcome {
                objectives,
                constraints,
            }) if objectives.len() == problem.objectives && constraints.len() == problem.constraints => {
                return EvaluationResult {
                    batch: req.batch,
                    index: req.index,
                    objectives,
                    constraints,
                    wall_seconds: start.elapsed().as_secs_f64(),
                    worker,
                    attempts,
                    error: None,
                };
            }
            Ok(o) => {
                last_error = format!(
                    "problem returned {} objectives and {} constraints, expected {} and {}",
                    o.objectives.len(),
                    o.constraints.len(),
                    problem.objectives,
                    problem.constraints
                );
            }
            Err(payload) => last_error = panic_message(payload.as_ref()),
        }
    }
    log::warn!("candidate {} of batch {} failed twice: {last_error}", req.index, req.batch);
    EvaluationResult {
        batch: req.batch,
        index: req.index,
        objectives: vec![f64::NAN; problem.objectives],
        constraints: vec![false; problem.constraints],
        wall_seconds: start.elapsed().as_secs_f64(),
        worker,
        attempts,
        error: Some(last_error),
    }
}

impl BatchEvaluator for LocalPool {
    fn evaluate_batch(&self, problem: &ProblemDefinition, batch: u64, points: &[Vec<f64>]) -> Vec<EvaluationResult> {
        let requests: Vec<EvaluationRequest> = points
            .iter()
            .enumerate()
            .map(|(index, p)| EvaluationRequest {
                batch,
                index,
                params: p.clone(),
            })
            .collect();
        if requests.is_empty() {
            return Vec::new();
        }
        if self.workers <= 1 {
            // inline: no thread spawn, which also keeps this usable on wasm
            return requests.iter().map(|req| run_one(problem, req, 0)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<EvaluationResult>>> = Mutex::new(vec![None; requests.len()]);
        let workers = self.workers.min(requests.len());
        std::thread::scope(|scope| {
            for worker in 0..workers {
                let (next, slots, requests) = (&next, &slots, &requests);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(req) = requests.get(i) else { break };
                    let res = run_one(problem, req, worker);
                    slots.lock().expect("collector lock")[i] = Some(res);
                });
            }
        });
        slots
            .into_inner()
            .expect("collector lock")
            .into_iter()
            .map(|r| r.expect("every request answered"))
            .collect()
    }
}

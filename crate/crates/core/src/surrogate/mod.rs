//! Joint surrogate: one residual MLP predicting objectives and constraint
//! satisfaction probabilities, with input gradients for feasibility-guided
//! search.

mod matrix;
mod network;
mod normalize;
mod train;

use serde::{Deserialize, Serialize};

use crate::domain::{EvaluationRecord, ParameterSpace};
use crate::error::{Error, Result};

pub use matrix::Matrix;
pub use network::{sigmoid, Activation};
pub use normalize::OutputNormalizer;
pub use train::{epoch_budget, train, ObjectiveLoss, TrainingSchedule};

use network::{Network, Output};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurrogateMode {
    #[serde(rename = "o")]
    Objectives,
    #[serde(rename = "c")]
    Constraints,
    #[serde(rename = "c+o")]
    Joint,
}

impl SurrogateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SurrogateMode::Objectives => "o",
            SurrogateMode::Constraints => "c",
            SurrogateMode::Joint => "c+o",
        }
    }

    pub fn has_objectives(self) -> bool {
        self != SurrogateMode::Constraints
    }

    pub fn has_constraints(self) -> bool {
        self != SurrogateMode::Objectives
    }
}

impl std::fmt::Display for SurrogateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SurrogateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "o" => Ok(SurrogateMode::Objectives),
            "c" => Ok(SurrogateMode::Constraints),
            "c+o" => Ok(SurrogateMode::Joint),
            other => Err(Error::InvalidConfig(format!("unknown surrogate mode `{other}` (expected o, c or c+o)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NanHandling {
    Remove,
    /// Replace with twice the column maximum.
    ReplaceTwiceMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub blocks: usize,
    pub block_dim: usize,
    pub hidden_multiplier: f64,
    pub dropout_hidden: f64,
    pub dropout_residual: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub folds: usize,
    pub activation: Activation,
    pub objective_loss: ObjectiveLoss,
    pub nan_handling: NanHandling,
    /// z-score threshold on `log(y + 1)`; `None` disables filtering.
    pub outlier_threshold: Option<f64>,
    /// Drop samples that violate every constraint.
    pub exclude_infeasible: bool,
    /// Upper cap on the automatic epoch budget.
    pub max_epochs: Option<usize>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            block_dim: 192,
            hidden_multiplier: 2.0,
            dropout_hidden: 0.15,
            dropout_residual: 0.0,
            learning_rate: 1e-3,
            batch_size: 2048,
            folds: 3,
            activation: Activation::Softplus,
            objective_loss: ObjectiveLoss::Mse,
            nan_handling: NanHandling::Remove,
            outlier_threshold: None,
            exclude_infeasible: false,
            max_epochs: None,
        }
    }
}

impl SurrogateConfig {
    pub fn hidden_dim(&self) -> usize {
        ((self.hidden_multiplier * self.block_dim as f64).floor() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("surrogate: {m}")));
        if self.blocks == 0 {
            return bad("blocks must be >= 1");
        }
        if self.block_dim == 0 {
            return bad("block_dim must be >= 1");
        }
        if !(self.hidden_multiplier > 0.0) {
            return bad("hidden_multiplier must be positive");
        }
        for p in [self.dropout_hidden, self.dropout_residual] {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout must lie in [0, 1)");
            }
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.folds < 2 {
            return bad("folds must be >= 2");
        }
        if self.max_epochs == Some(0) {
            return bad("max_epochs must be >= 1");
        }
        Ok(())
    }
}

/// Batch prediction in problem units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `rows × q` (empty rows in constraint-only mode).
    pub objectives: Vec<Vec<f64>>,
    /// `rows × k` probabilities (empty rows in objective-only mode).
    pub feasibility: Vec<Vec<f64>>,
}

/// Scalar picked out of the network for [`JointSurrogate::input_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSelector {
    Objective(usize),
    Constraint(usize),
}

/// Forward pass kept around for a subsequent input-gradient call.
pub struct Evaluation {
    pub objectives: Vec<Vec<f64>>,
    pub feasibility: Vec<Vec<f64>>,
    raw: Output,
}

impl Evaluation {
    pub fn logit(&self, i: usize, j: usize) -> f64 {
        self.raw.logits.get(i, j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSurrogate {
    config: SurrogateConfig,
    mode: SurrogateMode,
    space: ParameterSpace,
    network: Network,
    output: OutputNormalizer,
}

const PREDICT_CHUNK: usize = 1024;

/// Forward pass with everything needed for a later input-gradient pass.
pub struct Forward<S> {
    /// Denormalized objective predictions (`rows × q`).
    pub objectives: Vec<Vec<f64>>,
    /// Constraint logits (`rows × k`); probabilities are their sigmoids.
    pub logits: Vec<Vec<f64>>,
    pub state: S,
}

/// A model whose outputs can be differentiated with respect to raw inputs.
pub trait Differentiable {
    type State;

    fn space(&self) -> &ParameterSpace;
    fn objective_count(&self) -> usize;
    fn constraint_count(&self) -> usize;
    fn forward(&self, xs: &[Vec<f64>]) -> Forward<Self::State>;
    /// Input gradients given upstream gradients for objectives and logits.
    fn backward(&self, state: &Self::State, d_objectives: &[Vec<f64>], d_logits: &[Vec<f64>]) -> Vec<Vec<f64>>;
}

impl Differentiable for JointSurrogate {
    type State = Evaluation;

    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn objective_count(&self) -> usize {
        self.network.shape.objectives
    }

    fn constraint_count(&self) -> usize {
        self.network.shape.constraints
    }

    fn forward(&self, xs: &[Vec<f64>]) -> Forward<Evaluation> {
        let ev = self.evaluate(xs);
        Forward {
            objectives: ev.objectives.clone(),
            logits: (0..ev.raw.logits.rows()).map(|i| ev.raw.logits.row(i).to_vec()).collect(),
            state: ev,
        }
    }

    fn backward(&self, state: &Evaluation, d_objectives: &[Vec<f64>], d_logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
        JointSurrogate::backward(self, state, d_objectives, d_logits)
    }
}

impl JointSurrogate {
    pub fn mode(&self) -> SurrogateMode {
        self.mode
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn output_normalizer(&self) -> &OutputNormalizer {
        &self.output
    }

    pub fn objective_count(&self) -> usize {
        self.network.shape.objectives
    }

    pub fn constraint_count(&self) -> usize {
        self.network.shape.constraints
    }

    pub fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    fn inputs(&self, xs: &[Vec<f64>]) -> Matrix {
        let n = self.space.dim();
        let mut m = Matrix::zeros(xs.len(), n);
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(x.len(), n, "input dimension");
            m.row_mut(i).copy_from_slice(&self.space.normalize(x));
        }
        m
    }

    fn decode(&self, out: &Output) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let objectives = (0..out.objectives.rows())
            .map(|i| self.output.inverse(out.objectives.row(i)))
            .collect();
        let feasibility = (0..out.logits.rows())
            .map(|i| out.logits.row(i).iter().map(|&z| sigmoid(z)).collect())
            .collect();
        (objectives, feasibility)
    }

    /// Deterministic batch prediction; identical to row-by-row calls.
    pub fn predict(&self, xs: &[Vec<f64>]) -> Prediction {
        let mut objectives = Vec::with_capacity(xs.len());
        let mut feasibility = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(PREDICT_CHUNK) {
            let out = self.network.forward::<rand_chacha::ChaCha8Rng>(&self.inputs(chunk), None);
            let (o, f) = self.decode(&out);
            objectives.extend(o);
            feasibility.extend(f);
        }
        Prediction {
            objectives,
            feasibility,
        }
    }

    pub fn evaluate(&self, xs: &[Vec<f64>]) -> Evaluation {
        let raw = self.network.forward::<rand_chacha::ChaCha8Rng>(&self.inputs(xs), None);
        let (objectives, feasibility) = self.decode(&raw);
        Evaluation {
            objectives,
            feasibility,
            raw,
        }
    }

    /// Chains upstream gradients with respect to the denormalized objectives and
    /// the constraint logits back to the raw inputs.
    pub fn backward(&self, ev: &Evaluation, d_objectives: &[Vec<f64>], d_logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let rows = ev.raw.objectives.rows();
        let q = self.objective_count();
        let k = self.constraint_count();
        let d_t = Matrix::from_fn(rows, q, |i, j| {
            d_objectives[i][j] * self.output.inverse_derivative(j, ev.raw.objectives.get(i, j))
        });
        let d_z = Matrix::from_fn(rows, k, |i, j| d_logits[i][j]);
        let (dx, _) = self.network.backward(&ev.raw.cache, &d_t, &d_z, false);
        (0..rows)
            .map(|i| {
                dx.row(i)
                    .iter()
                    .enumerate()
                    .map(|(j, g)| g / self.space.width(j))
                    .collect()
            })
            .collect()
    }

    /// Gradient of one output with respect to the raw input `x`.
    pub fn input_gradient(&self, x: &[f64], selector: OutputSelector) -> Vec<f64> {
        let ev = self.evaluate(&[x.to_vec()]);
        let q = self.objective_count();
        let k = self.constraint_count();
        let mut d_obj = vec![vec![0.0; q]];
        let mut d_feas = vec![vec![0.0; k]];
        match selector {
            OutputSelector::Objective(j) => d_obj[0][j] = 1.0,
            OutputSelector::Constraint(j) => {
                let p = ev.feasibility[0][j];
                d_feas[0][j] = p * (1.0 - p);
            }
        }
        self.backward(&ev, &d_obj, &d_feas).remove(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("surrogate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("surrogate checkpoint: {e}")))
    }
}

/// Records usable for training: constraint flags are required, objectives may
/// be NaN only when the NaN policy replaces them.
pub(crate) fn training_rows(
    records: &[EvaluationRecord],
    cfg: &SurrogateConfig,
    q: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let mut keep: Vec<&EvaluationRecord> = records
        .iter()
        .filter(|r| r.objectives.len() == q)
        .filter(|r| cfg.nan_handling == NanHandling::ReplaceTwiceMax || r.objectives.iter().all(|v| v.is_finite()))
        .filter(|r| !(cfg.exclude_infeasible && !r.constraints.is_empty() && r.constraints.iter().all(|c| !c)))
        .collect();
    let mut ys: Vec<Vec<f64>> = keep.iter().map(|r| r.objectives.clone()).collect();
    if cfg.nan_handling == NanHandling::ReplaceTwiceMax {
        for j in 0..q {
            let max = ys
                .iter()
                .map(|y| y[j])
                .filter(|v| v.is_finite())
                .fold(f64::NEG_INFINITY, f64::max);
            let fill = if max.is_finite() { 2.0 * max } else { 0.0 };
            for y in ys.iter_mut() {
                if !y[j].is_finite() {
                    y[j] = fill;
                }
            }
        }
    }
    if let Some(theta) = cfg.outlier_threshold {
        let mut drop = vec![false; ys.len()];
        for j in 0..q {
            let logs: Vec<f64> = ys.iter().map(|y| signed_log1p(y[j])).collect();
            let n = logs.len() as f64;
            let mean = logs.iter().sum::<f64>() / n;
            let sd = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                for (i, v) in logs.iter().enumerate() {
                    if ((v - mean) / sd).abs() > theta {
                        drop[i] = true;
                    }
                }
            }
        }
        let mut i = 0;
        keep.retain(|_| {
            i += 1;
            !drop[i - 1]
        });
        let mut i = 0;
        ys.retain(|_| {
            i += 1;
            !drop[i - 1]
        });
    }
    let xs = keep.iter().map(|r| r.params.clone()).collect();
    let cs = keep.iter().map(|r| r.constraints.clone()).collect();
    (xs, ys, cs)
}

// log(y + 1) extended symmetrically so negative objectives stay finite
fn signed_log1p(y: f64) -> f64 {
    y.signum() * y.abs().ln_1p()
}

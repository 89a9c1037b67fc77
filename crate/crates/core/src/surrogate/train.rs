//! Adam training with K-fold epoch selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::network::{Dropout, Network, Shape};
use super::normalize::OutputNormalizer;
use super::{training_rows, JointSurrogate, SurrogateConfig, SurrogateMode};
use crate::domain::{EvaluationRecord, ParameterSpace};
use crate::error::{Error, Result};
use crate::rng::{RandomStream, StreamRng};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-7;
const RELATIVE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveLoss {
    Mse,
    Huber,
    LogCosh,
    WeightedLogCosh,
    DistanceWeightedMse,
    RelativeError,
}

impl ObjectiveLoss {
    /// Per-entry loss and its derivative with respect to the prediction.
    fn eval(self, pred: f64, target: f64) -> (f64, f64) {
        let r = pred - target;
        match self {
            ObjectiveLoss::Mse => (r * r, 2.0 * r),
            ObjectiveLoss::Huber => {
                if r.abs() <= 1.0 {
                    (0.5 * r * r, r)
                } else {
                    (r.abs() - 0.5, r.signum())
                }
            }
            ObjectiveLoss::LogCosh => (log_cosh(r), r.tanh()),
            ObjectiveLoss::WeightedLogCosh => {
                let w = 1.0 / (target.abs() + 1.0);
                (w * log_cosh(r), w * r.tanh())
            }
            ObjectiveLoss::DistanceWeightedMse => {
                let w = 1.0 / (target.abs() + 1.0);
                (w * r * r, 2.0 * w * r)
            }
            ObjectiveLoss::RelativeError => {
                let w = 1.0 / (target.abs() + RELATIVE_EPS);
                (w * r.abs(), w * r.signum())
            }
        }
    }
}

fn log_cosh(r: f64) -> f64 {
    let a = r.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Epoch-selection outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub max_epochs: usize,
    pub increment: usize,
    pub patience: usize,
    pub fold_stops: Vec<usize>,
    pub final_epochs: usize,
}

/// `(E_max, ΔE, patience)` for `n` training samples.
pub fn epoch_budget(n: usize) -> (usize, usize, usize) {
    let e_max = (100_000_000 / n.max(1)).min(10_000).max(25);
    increments(e_max)
}

fn increments(e_max: usize) -> (usize, usize, usize) {
    (e_max, (e_max / 10).max(10), e_max.min(250))
}

struct Data {
    x: Matrix,
    t: Matrix,
    c: Matrix,
}

impl Data {
    fn subset(&self, idx: &[usize]) -> Data {
        Data {
            x: self.x.select_rows(idx),
            t: self.t.select_rows(idx),
            c: self.c.select_rows(idx),
        }
    }

    fn len(&self) -> usize {
        self.x.rows()
    }
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(net: &Network, lr: f64) -> Self {
        let zeros = || net.params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, net: &mut Network, grads: &[Matrix]) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (pi, g) in grads.iter().enumerate() {
            let m = self.m[pi].data_mut();
            let v = self.v[pi].data_mut();
            let p = net.params[pi].data_mut();
            for e in 0..g.data().len() {
                let ge = g.data()[e];
                m[e] = ADAM_BETA1 * m[e] + (1.0 - ADAM_BETA1) * ge;
                v[e] = ADAM_BETA2 * v[e] + (1.0 - ADAM_BETA2) * ge * ge;
                p[e] -= self.lr * (m[e] / c1) / ((v[e] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Mean objective loss plus mean BCE, with gradients w.r.t. outputs/logits.
fn loss(kind: ObjectiveLoss, obj: &Matrix, logits: &Matrix, data: &Data) -> (f64, Matrix, Matrix) {
    let mut d_obj = Matrix::zeros(obj.rows(), obj.cols());
    let mut total = 0.0;
    let n_obj = obj.data().len();
    if n_obj > 0 {
        let mut sum = 0.0;
        for (e, (&p, &t)) in obj.data().iter().zip(data.t.data()).enumerate() {
            let (l, g) = kind.eval(p, t);
            sum += l;
            d_obj.data_mut()[e] = g / n_obj as f64;
        }
        total += sum / n_obj as f64;
    }
    let mut d_log = Matrix::zeros(logits.rows(), logits.cols());
    let n_con = logits.data().len();
    if n_con > 0 {
        let mut sum = 0.0;
        for (e, (&z, &c)) in logits.data().iter().zip(data.c.data()).enumerate() {
            sum += z.max(0.0) - z * c + (-z.abs()).exp().ln_1p();
            d_log.data_mut()[e] = (super::sigmoid(z) - c) / n_con as f64;
        }
        total += sum / n_con as f64;
    }
    (total, d_obj, d_log)
}

struct Trainer<'a> {
    cfg: &'a SurrogateConfig,
    net: Network,
    adam: Adam,
    rng: StreamRng,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a SurrogateConfig, shape: Shape, mut rng: StreamRng) -> Self {
        let net = Network::new(shape, cfg.activation, &mut rng);
        let adam = Adam::new(&net, cfg.learning_rate);
        Self { cfg, net, adam, rng }
    }

    /// One pass over shuffled minibatches; returns the mean batch loss.
    fn epoch(&mut self, data: &Data) -> f64 {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = data.subset(chunk);
            let out = self.net.forward(
                &batch.x,
                Some(Dropout {
                    p1: self.cfg.dropout_hidden,
                    p2: self.cfg.dropout_residual,
                    rng: &mut self.rng,
                }),
            );
            let (l, d_obj, d_log) = loss(self.cfg.objective_loss, &out.objectives, &out.logits, &batch);
            if !l.is_finite() {
                return f64::NAN;
            }
            let (_, grads) = self.net.backward(&out.cache, &d_obj, &d_log, true);
            self.adam.update(&mut self.net, &grads.expect("parameter gradients"));
            total += l;
            batches += 1;
        }
        total / batches as f64
    }

    fn evaluate(&self, data: &Data) -> f64 {
        let out = self.net.forward::<StreamRng>(&data.x, None);
        loss(self.cfg.objective_loss, &out.objectives, &out.logits, data).0
    }
}

/// Contiguous folds: the first `n % k` folds get one extra sample.
fn kfold(n: usize, k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut start = 0;
    (0..k)
        .map(|f| {
            let size = n / k + usize::from(f < n % k);
            let val: Vec<usize> = (start..start + size).collect();
            let train = (0..start).chain(start + size..n).collect();
            start += size;
            (train, val)
        })
        .collect()
}

/// Trains a surrogate on `records`. `q`/`k` are the problem's objective and
/// constraint counts; the mode decides which heads exist.
pub fn train(
    records: &[EvaluationRecord],
    space: &ParameterSpace,
    q: usize,
    k: usize,
    mode: SurrogateMode,
    cfg: &SurrogateConfig,
    stream: &RandomStream,
) -> Result<(JointSurrogate, TrainingSchedule)> {
    cfg.validate()?;
    let (xs, ys, cs) = training_rows(records, cfg, q);
    let need = 2 * cfg.folds;
    if xs.len() < need {
        return Err(Error::InsufficientData { have: xs.len(), need });
    }
    if xs.iter().any(|x| x.len() != space.dim()) {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: xs.iter().map(Vec::len).find(|&l| l != space.dim()).unwrap_or(0),
        });
    }
    let q_model = if mode.has_objectives() { q } else { 0 };
    let k_model = if mode.has_constraints() { k } else { 0 };
    let output = OutputNormalizer::fit(&ys, q_model);
    let n = space.dim();
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| space.normalize(x)).collect();
    let data = Data {
        x: Matrix::from_rows(&rows, n),
        t: Matrix::from_fn(ys.len(), q_model, |i, j| output.transform(&ys[i])[j]),
        c: Matrix::from_fn(cs.len(), k_model, |i, j| if cs[i][j] { 1.0 } else { 0.0 }),
    };
    let shape = Shape {
        inputs: n,
        block_dim: cfg.block_dim,
        hidden: cfg.hidden_dim(),
        blocks: cfg.blocks,
        objectives: q_model,
        constraints: k_model,
    };

    let (formula_max, _, _) = epoch_budget(data.len());
    let e_max = cfg.max_epochs.map_or(formula_max, |cap| formula_max.min(cap));
    let (e_max, increment, patience) = increments(e_max);

    let mut fold_stops = Vec::with_capacity(cfg.folds);
    for (f, (train_idx, val_idx)) in kfold(data.len(), cfg.folds).into_iter().enumerate() {
        let train_data = data.subset(&train_idx);
        let val_data = data.subset(&val_idx);
        let mut trainer = Trainer::new(cfg, shape, stream.derive(format!("fold{f}")).rng());
        let mut best = f64::INFINITY;
        let mut wait = 0;
        let mut done = 0;
        let mut stopped = None;
        while done < e_max && stopped.is_none() {
            for _ in 0..increment.min(e_max - done) {
                let train_loss = trainer.epoch(&train_data);
                done += 1;
                let val = trainer.evaluate(&val_data);
                if !train_loss.is_finite() || !val.is_finite() {
                    stopped = Some(done);
                    break;
                }
                if val < best {
                    best = val;
                    wait = 0;
                } else {
                    wait += 1;
                    if wait >= patience {
                        stopped = Some(done);
                        break;
                    }
                }
            }
        }
        let stop = stopped.unwrap_or(done);
        log::debug!("fold {f}: stopped at epoch {stop} (best validation loss {best:.4e})");
        fold_stops.push(stop);
    }
    let mean = fold_stops.iter().sum::<usize>() as f64 / fold_stops.len() as f64;
    let final_epochs = (mean.round() as usize).max(1);

    let mut trainer = Trainer::new(cfg, shape, stream.derive("final").rng());
    for _ in 0..final_epochs {
        if !trainer.epoch(&data).is_finite() {
            return Err(Error::Training("loss became NaN while fitting the final model".into()));
        }
    }
    let surrogate = JointSurrogate {
        config: cfg.clone(),
        mode,
        space: space.clone(),
        network: trainer.net,
        output,
    };
    Ok((
        surrogate,
        TrainingSchedule {
            max_epochs: e_max,
            increment,
            patience,
            fold_stops,
            final_epochs,
        },
    ))
}

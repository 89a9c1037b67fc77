//! Elasticity-based parameter sensitivity and its mapping to per-dimension
//! NSGA-II distribution indices.

use serde::{Deserialize, Serialize};

use crate::moea::{DistributionIndices, ETA_MAX, ETA_MIN};
use crate::surrogate::Differentiable;

pub const BATCH: usize = 1024;
pub const SCALE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityMode {
    Off,
    On,
    Inverted,
}

/// Which objective output the elasticities are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveSelector {
    /// Average of the per-objective elasticities.
    Mean,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityIndices {
    pub s_bar: Vec<f64>,
}

/// `S̄_j = mean_i |∂ŷ/∂x_j (x_i) · x_ij|`, batched.
pub fn compute_elasticities<M: Differentiable>(model: &M, xs: &[Vec<f64>], selector: ObjectiveSelector) -> SensitivityIndices {
    let n = model.space().dim();
    let q = model.objective_count();
    let k = model.constraint_count();
    let outputs: Vec<usize> = match selector {
        ObjectiveSelector::Mean => (0..q).collect(),
        ObjectiveSelector::Index(j) if j < q => vec![j],
        ObjectiveSelector::Index(_) => Vec::new(),
    };
    if xs.is_empty() || outputs.is_empty() {
        return SensitivityIndices { s_bar: vec![0.0; n] };
    }
    let mut per_output = vec![vec![0.0; n]; outputs.len()];
    for chunk in xs.chunks(BATCH) {
        let fwd = model.forward(chunk);
        let d_log = vec![vec![0.0; k]; chunk.len()];
        for (slot, &o) in outputs.iter().enumerate() {
            let mut d_obj = vec![vec![0.0; q]; chunk.len()];
            for row in d_obj.iter_mut() {
                row[o] = 1.0;
            }
            let grads = model.backward(&fwd.state, &d_obj, &d_log);
            for (g, x) in grads.iter().zip(chunk) {
                for j in 0..n {
                    per_output[slot][j] += (g[j] * x[j]).abs();
                }
            }
        }
    }
    let count = xs.len() as f64;
    let s_bar = (0..n)
        .map(|j| per_output.iter().map(|s| s[j] / count).sum::<f64>() / outputs.len() as f64)
        .collect();
    SensitivityIndices { s_bar }
}

/// `η_j = clip(1 + 20 |S̄_j|, 1, 30)` for both crossover and mutation.
pub fn indices_from_sensitivity(s: &SensitivityIndices) -> DistributionIndices {
    let eta: Vec<f64> = s
        .s_bar
        .iter()
        .map(|v| {
            let e = 1.0 + v.abs() * SCALE;
            if e.is_nan() {
                ETA_MAX
            } else {
                e.clamp(ETA_MIN, ETA_MAX)
            }
        })
        .collect();
    DistributionIndices {
        cross: eta.clone(),
        mutation: eta,
    }
}

/// `η_inv = clip(21 − η, 1, 30)`.
pub fn invert_indices(eta: &DistributionIndices) -> DistributionIndices {
    let inv = |v: &Vec<f64>| v.iter().map(|e| (21.0 - e).clamp(ETA_MIN, ETA_MAX)).collect();
    DistributionIndices {
        cross: inv(&eta.cross),
        mutation: inv(&eta.mutation),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EvaluationRecord, ParameterSpace, Provenance};
    use crate::rng::RandomStream;
    use crate::surrogate::{train, Forward, SurrogateConfig, SurrogateMode};
    use proptest::prelude::*;

    /// `ŷ_o = scale · (c_o · x)`.
    struct Linear {
        space: ParameterSpace,
        coef: Vec<Vec<f64>>,
        scale: f64,
    }

    impl Differentiable for Linear {
        type State = ();

        fn space(&self) -> &ParameterSpace {
            &self.space
        }

        fn objective_count(&self) -> usize {
            self.coef.len()
        }

        fn constraint_count(&self) -> usize {
            0
        }

        fn forward(&self, xs: &[Vec<f64>]) -> Forward<()> {
            Forward {
                objectives: xs
                    .iter()
                    .map(|x| self.coef.iter().map(|c| self.scale * c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).collect())
                    .collect(),
                logits: vec![vec![]; xs.len()],
                state: (),
            }
        }

        fn backward(&self, _: &(), d_obj: &[Vec<f64>], _: &[Vec<f64>]) -> Vec<Vec<f64>> {
            d_obj
                .iter()
                .map(|d| {
                    (0..self.space.dim())
                        .map(|j| self.coef.iter().zip(d).map(|(c, g)| self.scale * c[j] * g).sum())
                        .collect()
                })
                .collect()
        }
    }

    fn linear(coef: Vec<Vec<f64>>, scale: f64) -> Linear {
        Linear {
            space: ParameterSpace::uniform(coef[0].len(), -10.0, 10.0).unwrap(),
            coef,
            scale,
        }
    }

    #[test]
    fn elasticity_examples() {
        let m = linear(vec![vec![2.0, 0.0]], 1.0);
        let s = compute_elasticities(&m, &[vec![3.0, 1.0]], ObjectiveSelector::Mean);
        assert_eq!(s.s_bar, vec![6.0, 0.0]);
        let zero = linear(vec![vec![0.0, 0.0]], 1.0);
        assert_eq!(compute_elasticities(&zero, &[vec![1.0, 2.0]], ObjectiveSelector::Mean).s_bar, vec![0.0, 0.0]);
        let two = linear(vec![vec![1.0, 0.0], vec![0.0, 4.0]], 1.0);
        let xs = [vec![1.0, 1.0], vec![-3.0, 0.5]];
        assert_eq!(compute_elasticities(&two, &xs, ObjectiveSelector::Mean).s_bar, vec![1.0, 1.5]);
        assert_eq!(compute_elasticities(&two, &xs, ObjectiveSelector::Index(1)).s_bar, vec![0.0, 3.0]);
    }

    #[test]
    fn eta_examples() {
        let eta = indices_from_sensitivity(&SensitivityIndices {
            s_bar: vec![0.0, 1.0, 5.0, -0.5],
        });
        assert_eq!(eta.cross, vec![1.0, 21.0, 30.0, 11.0]);
        assert_eq!(eta.mutation, eta.cross);
        let inv = invert_indices(&DistributionIndices::new(vec![1.0, 21.0, 10.5], vec![1.0, 21.0, 10.5]).unwrap());
        assert_eq!(inv.cross, vec![20.0, 1.0, 10.5]);
    }

    #[test]
    fn surrogate_elasticities_match_finite_differences() {
        let space = ParameterSpace::new(vec!["a".into(), "b".into()], vec![0.5, -2.0], vec![2.0, 1.0]).unwrap();
        let mut rng = RandomStream::new(8, "s").rng();
        use rand::Rng;
        let recs: Vec<EvaluationRecord> = (0..30)
            .map(|_| {
                let x = vec![rng.random_range(0.5..2.0), rng.random_range(-2.0..1.0)];
                EvaluationRecord {
                    objectives: vec![x[0] * x[1], x[0] + x[1] * x[1]],
                    constraints: vec![],
                    params: x,
                    epoch: 0,
                    provenance: Provenance::Init,
                }
            })
            .collect();
        let cfg = SurrogateConfig {
            block_dim: 8,
            max_epochs: Some(30),
            ..SurrogateConfig::default()
        };
        let (model, _) = train(&recs, &space, 2, 0, SurrogateMode::Objectives, &cfg, &RandomStream::new(1, "t")).unwrap();
        let xs: Vec<Vec<f64>> = recs.iter().take(10).map(|r| r.params.clone()).collect();
        let s = compute_elasticities(&model, &xs, ObjectiveSelector::Mean);
        let mut fd = [0.0; 2];
        for x in &xs {
            for j in 0..2 {
                let h = 1e-5 * space.width(j);
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let p = model.predict(&[xp, xm]).objectives;
                for o in 0..2 {
                    fd[j] += ((p[0][o] - p[1][o]) / (2.0 * h) * x[j]).abs() / 20.0;
                }
            }
        }
        for j in 0..2 {
            assert!((s.s_bar[j] - fd[j]).abs() <= 1e-3 * fd[j].abs().max(1e-9), "{j}: {} vs {}", s.s_bar[j], fd[j]);
        }
    }

    proptest! {
        #[test]
        fn doubling_the_model_doubles_elasticities(
            coef in prop::collection::vec(-3.0f64..3.0, 3),
            xs in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..20),
        ) {
            let a = compute_elasticities(&linear(vec![coef.clone()], 1.0), &xs, ObjectiveSelector::Mean);
            let b = compute_elasticities(&linear(vec![coef], 2.0), &xs, ObjectiveSelector::Mean);
            for (x, y) in a.s_bar.iter().zip(&b.s_bar) {
                prop_assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn eta_monotone_bounded_and_argmax_preserving(s in prop::collection::vec(0.0f64..3.0, 1..8)) {
            let eta = indices_from_sensitivity(&SensitivityIndices { s_bar: s.clone() });
            for i in 0..s.len() {
                prop_assert!((ETA_MIN..=ETA_MAX).contains(&eta.cross[i]));
                for j in 0..s.len() {
                    if s[i] <= s[j] {
                        prop_assert!(eta.cross[i] <= eta.cross[j]);
                    }
                }
            }
            let arg = (0..s.len()).fold(0, |b, i| if s[i] > s[b] { i } else { b });
            let max = eta.cross.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(eta.cross[arg], max);
        }
    }
}

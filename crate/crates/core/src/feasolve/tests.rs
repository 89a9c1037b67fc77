use super::*;
use crate::domain::ParameterSpace;
use crate::surrogate::Forward;
use proptest::prelude::*;

/// Objectives `y = A x + a0` (plus an optional square), constraint logits
/// `z = W x + w0`.
struct Analytic {
    space: ParameterSpace,
    a: Vec<Vec<f64>>,
    a0: Vec<f64>,
    w: Vec<Vec<f64>>,
    w0: Vec<f64>,
    square: bool,
}

impl Differentiable for Analytic {
    type State = Vec<Vec<f64>>;

    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn objective_count(&self) -> usize {
        self.a.len()
    }

    fn constraint_count(&self) -> usize {
        self.w.len()
    }

    fn forward(&self, xs: &[Vec<f64>]) -> Forward<Self::State> {
        let lin = |m: &Vec<Vec<f64>>, b: &Vec<f64>, x: &Vec<f64>| -> Vec<f64> {
            m.iter()
                .zip(b)
                .map(|(r, c)| r.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() + c)
                .collect()
        };
        let objectives = xs
            .iter()
            .map(|x| {
                let y = lin(&self.a, &self.a0, x);
                if self.square {
                    y.iter().map(|v| v * v).collect()
                } else {
                    y
                }
            })
            .collect();
        Forward {
            objectives,
            logits: xs.iter().map(|x| lin(&self.w, &self.w0, x)).collect(),
            state: xs.to_vec(),
        }
    }

    fn backward(&self, xs: &Self::State, d_obj: &[Vec<f64>], d_log: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                (0..x.len())
                    .map(|j| {
                        let mut g = 0.0;
                        for (o, row) in self.a.iter().enumerate() {
                            let mut scale = 1.0;
                            if self.square {
                                scale = 2.0 * (row.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() + self.a0[o]);
                            }
                            g += d_obj[i][o] * row[j] * scale;
                        }
                        for (c, row) in self.w.iter().enumerate() {
                            g += d_log[i][c] * row[j];
                        }
                        g
                    })
                    .collect()
            })
            .collect()
    }
}

fn unit(n: usize) -> ParameterSpace {
    ParameterSpace::uniform(n, 0.0, 1.0).unwrap()
}

#[test]
fn objective_loss_examples() {
    let (l, _) = loss_objective(&[vec![1.0, 1.0]], &[1.0, 1.0], 1.1);
    assert!((l + 0.01).abs() < 1e-9);
    let (l, _) = loss_objective(&[vec![0.5, 0.5]], &[1.0, 1.0], 1.1);
    assert!((l + 0.36).abs() < 1e-9);
    let (l, g) = loss_objective(&[vec![1.2, 0.1]], &[1.0, 1.0], 1.1);
    assert!((l + (1.1 - 1.2 / (1.2 + EPS)) * (1.1 - 0.1)).abs() < 1e-9);
    assert!(g[0].iter().all(|v| v.is_finite()));
    let (l, g) = loss_objective(&[vec![2.0, 0.1], vec![0.5, 0.5]], &[1.0, 1.0], 1.1);
    assert!(l < 0.0 && g.len() == 2);
}

#[test]
fn constraint_loss_examples() {
    let (l, _) = loss_constraint(&[vec![0.0]], 2.0, 0.25);
    assert!((l - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
    let (l, _) = loss_constraint(&[vec![40.0, 40.0]], 2.0, 0.25);
    assert!(l < 1e-30);
    let logits = vec![vec![0.3, -1.2], vec![2.0, -0.4]];
    let (l, _) = loss_constraint(&logits, 0.0, 1.0);
    let bce = -logits.iter().flatten().map(|&z| sigmoid(z).ln()).sum::<f64>() / 4.0;
    assert!((l - bce).abs() < 1e-12);
    let (l, g) = loss_constraint(&[vec![-800.0]], 2.0, 0.25);
    assert!(l.is_finite() && g[0][0].is_finite() && g[0][0] < 0.0);
}

#[test]
fn distance_and_zero_loss_examples() {
    assert_eq!(loss_distance(&[vec![0.3]], &[vec![0.3]]).0, 0.0);
    assert_eq!(loss_distance(&[vec![0.0]], &[vec![1.0]]).0, -1.0);
    assert_eq!(loss_distance(&[vec![0.0], vec![1.0]], &[vec![0.0], vec![1.0]]).0, -0.5);
    assert_eq!(loss_zero(&[vec![1.0, 2.0]]).0, 0.0);
    assert_eq!(loss_zero(&[vec![-2.0]]).0, 4.0);
    assert_eq!(loss_zero(&[vec![-1.0, 3.0]]).0, 1.0);
}

fn check_fd(f: impl Fn(&[Vec<f64>]) -> (f64, Batch), x: Vec<Vec<f64>>) {
    let (_, g) = f(&x);
    let h = 1e-6;
    for i in 0..x.len() {
        for j in 0..x[i].len() {
            let mut xp = x.clone();
            xp[i][j] += h;
            let mut xm = x.clone();
            xm[i][j] -= h;
            let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
            assert!((fd - g[i][j]).abs() < 1e-6 * (1.0 + fd.abs()), "[{i}][{j}] fd {fd} vs {}", g[i][j]);
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    // second candidate sets the nadir in objective 0
    let pred = vec![vec![0.4, 0.7], vec![1.3, 0.2], vec![0.9, 0.5]];
    check_fd(|p| loss_objective(p, &[1.0, 0.8], 1.1), pred.clone());
    check_fd(|p| loss_constraint(p, 2.0, 0.25), vec![vec![0.3, -1.5], vec![2.2, 0.1]]);
    check_fd(|p| loss_distance(p, &[vec![0.1, 0.9], vec![0.5, 0.5]]), vec![vec![0.3, 0.2], vec![0.8, 0.6]]);
    check_fd(loss_zero, vec![vec![-0.5, 0.4], vec![1.0, -2.0]]);
}

#[test]
fn composite_gradient_through_model_matches_finite_differences() {
    let model = Analytic {
        space: ParameterSpace::new(vec!["a".into(), "b".into()], vec![-1.0, 0.0], vec![3.0, 2.0]).unwrap(),
        a: vec![vec![0.7, -0.2], vec![0.1, 0.9]],
        a0: vec![0.3, 0.1],
        w: vec![vec![1.5, -0.5]],
        w0: vec![-0.2],
        square: true,
    };
    let train = vec![vec![0.0, 1.0], vec![2.0, 0.5]];
    let ctx = TrainingContext::new(&train, &[vec![4.0, 3.0]], 2);
    let x = vec![vec![0.5, 1.2], vec![1.7, 0.4]];
    let composite = |x: &[Vec<f64>], t: Target| -> (f64, Batch) {
        let fwd = model.forward(x);
        match t {
            Target::Objective => {
                let (l, d) = loss_objective(&fwd.objectives, &ctx.objective_max, 1.1);
                (l, model.backward(&fwd.state, &d, &zeros_like(&fwd.logits)))
            }
            Target::Constraint => {
                let (l, d) = loss_constraint(&fwd.logits, 2.0, 0.25);
                (l, model.backward(&fwd.state, &zeros_like(&fwd.objectives), &d))
            }
            Target::Zero => {
                let (l, d) = loss_zero(&fwd.objectives);
                (l, model.backward(&fwd.state, &d, &zeros_like(&fwd.logits)))
            }
            Target::Distance => {
                let xn: Vec<Vec<f64>> = x.iter().map(|p| model.space.normalize(p)).collect();
                let tn: Vec<Vec<f64>> = train.iter().map(|p| model.space.normalize(p)).collect();
                let (l, d) = loss_distance(&xn, &tn);
                (l, d.iter().map(|r| r.iter().enumerate().map(|(j, v)| v / model.space.width(j)).collect()).collect())
            }
        }
    };
    for t in [Target::Objective, Target::Constraint, Target::Zero, Target::Distance] {
        check_fd(|x| composite(x, t), x.clone());
    }
}

#[test]
fn balancing_examples() {
    let g1 = vec![vec![2.0, 0.0]];
    assert_eq!(balance_gradients(std::slice::from_ref(&g1)), g1);
    let g2 = vec![vec![0.0, 4.0]];
    let out = balance_gradients(&[g1.clone(), g2]);
    assert!((out[0][0] - 2.0).abs() < 1e-12 && (out[0][1] - 2.0).abs() < 1e-9);
    let out = balance_gradients(&[g1.clone(), vec![vec![0.0, 0.0]]]);
    assert_eq!(out, g1);
}

#[test]
fn plateau_detector() {
    let flat = vec![3.0; 50];
    assert!(!is_plateau(&flat[..49], 50, 0.01));
    assert!(is_plateau(&flat, 50, 0.01));
    let falling: Vec<f64> = (0..50).map(|i| 100.0 - i as f64).collect();
    assert!(!is_plateau(&falling, 50, 0.01));
    let sorted: Vec<f64> = (0..5).map(f64::from).collect();
    assert_eq!(percentile(&sorted, 0.25), 1.0);
    assert_eq!(percentile(&[1.0, 2.0], 0.75), 1.75);
}

#[test]
fn split_sizes() {
    assert_eq!(hybrid_split(100), 50);
    assert_eq!(hybrid_split(2), 1);
    assert_eq!(hybrid_split(3), 2);
}

#[test]
fn constant_model_leaves_candidates_and_plateaus() {
    let model = Analytic {
        space: unit(2),
        a: vec![vec![0.0, 0.0]; 2],
        a0: vec![0.5, 0.5],
        w: vec![vec![0.0, 0.0]],
        w0: vec![0.0],
        square: false,
    };
    let start = vec![vec![0.2, 0.3], vec![0.9, 0.1]];
    let ctx = TrainingContext::new(&[], &[vec![1.0, 1.0]], 2);
    let (x, trace) = make_feasible(&start, &model, &FeasolveConfig::default(), &ctx).unwrap();
    assert_eq!(x, start);
    assert_eq!(trace.stop, StopReason::Plateau);
    assert_eq!(trace.len(), 50);
}

#[test]
fn separable_constraint_moves_along_weights_until_clipped() {
    let model = Analytic {
        space: unit(2),
        a: vec![],
        a0: vec![],
        w: vec![vec![3.0, -2.0]],
        w0: vec![-1.0],
        square: false,
    };
    let start = vec![vec![0.5, 0.5], vec![0.1, 0.8]];
    let cfg = FeasolveConfig {
        targets: vec![Target::Constraint],
        learning_rate: 0.01,
        ..FeasolveConfig::default()
    };
    let ctx = TrainingContext::new(&[], &[], 0);
    let (x, trace) = make_feasible(&start, &model, &cfg, &ctx).unwrap();
    for (a, b) in x.iter().zip(&start) {
        assert!(a[0] > b[0] && a[1] < b[1]);
    }
    let mean_p: Vec<f64> = trace
        .steps
        .iter()
        .map(|s| s.feasibility.iter().flatten().sum::<f64>() / 2.0)
        .collect();
    for w in mean_p.windows(2) {
        assert!(w[1] >= w[0]);
    }
    assert!(mean_p.windows(2).take(20).all(|w| w[1] > w[0]));
    for s in &trace.steps {
        for c in &s.candidates {
            assert!(model.space.contains(c));
        }
    }
}

#[test]
fn zero_target_alone_uses_plain_steps() {
    let model = Analytic {
        space: ParameterSpace::uniform(1, -1.0, 1.0).unwrap(),
        a: vec![vec![1.0]],
        a0: vec![0.0],
        w: vec![],
        w0: vec![],
        square: false,
    };
    let cfg = FeasolveConfig {
        targets: vec![Target::Zero],
        max_iters: 1,
        learning_rate: 0.1,
        ..FeasolveConfig::default()
    };
    let ctx = TrainingContext::new(&[], &[], 1);
    // from x = -0.5 the loss is x², so one plain step moves by 0.1 * 1
    let (x, trace) = make_feasible(&[vec![-0.5]], &model, &cfg, &ctx).unwrap();
    assert_eq!(trace.len(), 1);
    assert!((x[0][0] + 0.4).abs() < 1e-12, "{x:?}");
}

#[test]
fn diversity_filter_examples() {
    let pts: Vec<Vec<f64>> = [0.0, 0.1, 0.5, 1.0].iter().map(|v| vec![*v]).collect();
    assert_eq!(trace_diversity_filter(&pts, 2), vec![2, 3]);
    assert_eq!(trace_diversity_filter(&pts, 4), vec![0, 1, 2, 3]);
    assert_eq!(trace_diversity_filter(&pts, 9), vec![0, 1, 2, 3]);
}

// reference implementation: recompute every nearest distance each round
fn filter_oracle(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let dim = points[0].len();
    let scaled: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            (0..dim)
                .map(|j| {
                    let lo = points.iter().map(|q| q[j]).fold(f64::INFINITY, f64::min);
                    let hi = points.iter().map(|q| q[j]).fold(f64::NEG_INFINITY, f64::max);
                    if hi > lo {
                        (p[j] - lo) / (hi - lo)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut alive: Vec<usize> = (0..points.len()).collect();
    while alive.len() > k {
        let mut best = (f64::INFINITY, 0);
        for (pos, &i) in alive.iter().enumerate() {
            let d = alive
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| scaled[i].iter().zip(&scaled[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            if d < best.0 {
                best = (d, pos);
            }
        }
        alive.remove(best.1);
    }
    alive
}

#[test]
fn collinear_extremes_survive() {
    let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
    let kept = trace_diversity_filter(&pts, 2);
    assert!(kept.contains(&0) || kept.contains(&8), "{kept:?}");
    assert_eq!(filter_oracle(&pts, 2), kept);
}

proptest! {
    #[test]
    fn filter_matches_oracle(
        pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 2..25),
        k in 1usize..10,
    ) {
        prop_assert_eq!(trace_diversity_filter(&pts, k), filter_oracle(&pts, k.min(pts.len())));
    }

    #[test]
    fn balanced_terms_share_reference_norm(
        g in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..5),
    ) {
        let grads: Vec<Batch> = g.iter().map(|r| vec![r.clone()]).collect();
        let reference = norm(&grads[0]);
        for t in &grads {
            let s = reference / (norm(t) + EPS);
            let scaled: Batch = t.iter().map(|r| r.iter().map(|v| v * s).collect()).collect();
            if norm(t) > 1e-6 {
                prop_assert!((norm(&scaled) - reference).abs() < 1e-9 * reference.max(1.0));
            }
        }
    }
}

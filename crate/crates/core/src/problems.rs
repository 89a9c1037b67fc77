//! Built-in benchmark problems and the name registry.

use std::fmt;
use std::sync::Arc;

use crate::domain::ParameterSpace;
use crate::error::{Error, Result};

/// True-problem output for one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub objectives: Vec<f64>,
    /// `true` = satisfied.
    pub constraints: Vec<bool>,
}

type EvalFn = dyn Fn(&[f64]) -> Outcome + Send + Sync;

/// Uniform-sampling feasibility rates estimated by Monte Carlo.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityRates {
    pub joint: f64,
    pub per_constraint: Vec<f64>,
    pub samples: u64,
}

#[derive(Clone)]
pub struct ProblemDefinition {
    pub name: String,
    pub space: ParameterSpace,
    pub objectives: usize,
    pub constraints: usize,
    pub description: String,
    pub pareto: Option<String>,
    pub rates: Option<FeasibilityRates>,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDefinition")
            .field("name", &self.name)
            .field("dim", &self.space.dim())
            .field("objectives", &self.objectives)
            .field("constraints", &self.constraints)
            .finish()
    }
}

impl ProblemDefinition {
    pub fn new(
        name: impl Into<String>,
        space: ParameterSpace,
        objectives: usize,
        constraints: usize,
        eval: impl Fn(&[f64]) -> Outcome + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            space,
            objectives,
            constraints,
            description: String::new(),
            pareto: None,
            rates: None,
            eval: Arc::new(eval),
        }
    }

    pub fn with_description(mut self, text: impl Into<String>) -> Self {
        self.description = text.into();
        self
    }

    pub fn evaluate(&self, x: &[f64]) -> Outcome {
        (self.eval)(x)
    }
}

/// Squared distance from `v` to the interval `[l, u]`; zero inside.
pub fn range_distance_objective(v: f64, l: f64, u: f64) -> f64 {
    if v.is_nan() {
        return f64::NAN;
    }
    if (l..=u).contains(&v) {
        0.0
    } else {
        let d = (v - l).abs().min((v - u).abs());
        d * d
    }
}

/// Satisfied iff `v` lies in `[l, u]`; NaN never satisfies.
pub fn range_constraint(v: f64, l: f64, u: f64) -> bool {
    (l..=u).contains(&v)
}

fn sq_dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn make_two_sphere(n: usize, a: Vec<f64>, b: Vec<f64>) -> Result<ProblemDefinition> {
    let space = ParameterSpace::uniform(n, 0.0, 1.0)?;
    if a.len() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if a.len() != n { a.len() } else { b.len() },
        });
    }
    if a == b || !space.contains(&a) || !space.contains(&b) {
        return Err(Error::InvalidConfig("two_sphere centres must differ and lie in the unit box".into()));
    }
    let pareto = format!("segment between {a:?} and {b:?}");
    let mut p = ProblemDefinition::new("two_sphere", space, 2, 0, move |x| Outcome {
        objectives: vec![sq_dist(x, &a), sq_dist(x, &b)],
        constraints: vec![],
    })
    .with_description("squared distances to two centres in the unit box; unconstrained");
    p.pareto = Some(pareto);
    Ok(p)
}

/// Centres used by the registry: `0.2·1` and `0.8·1`.
pub fn default_two_sphere(n: usize) -> Result<ProblemDefinition> {
    make_two_sphere(n, vec![0.2; n], vec![0.8; n])
}

pub const THIN_BAND_TOLERANCE: f64 = 0.02;
pub const THIN_BAND_SIN: f64 = 0.95;
/// Coordinates outside `[lo, hi]` give NaN objectives in the NaN variant.
pub const THIN_BAND_VALID: (f64, f64) = (0.05, 0.95);

/// Two-sphere objectives with three constraints whose joint feasible set is a
/// thin band; each constraint alone is easy to satisfy.
pub fn make_thin_band(n: usize, nan_outside_validity: bool) -> Result<ProblemDefinition> {
    if n < 3 {
        return Err(Error::InvalidConfig(format!("thin_band needs n >= 3, got {n}")));
    }
    let space = ParameterSpace::uniform(n, 0.0, 1.0)?;
    let a = vec![0.2; n];
    let b = vec![0.8; n];
    let name = if nan_outside_validity { "thin_band_nan" } else { "thin_band" };
    let mut p = ProblemDefinition::new(name, space, 2, 3, move |x| {
        let c = vec![
            (x[0] - x[1]).abs() <= THIN_BAND_TOLERANCE,
            (x[1] - x[2]).abs() <= THIN_BAND_TOLERANCE,
            (std::f64::consts::PI * x[0]).sin() >= THIN_BAND_SIN,
        ];
        let (lo, hi) = THIN_BAND_VALID;
        let objectives = if nan_outside_validity && x.iter().any(|v| !(lo..=hi).contains(v)) {
            vec![f64::NAN; 2]
        } else {
            vec![sq_dist(x, &a), sq_dist(x, &b)]
        };
        Outcome {
            objectives,
            constraints: c,
        }
    })
    .with_description(
        "two-sphere objectives; |x1-x2| <= 0.02, |x2-x3| <= 0.02, sin(pi x1) >= 0.95",
    );
    p.rates = Some(FeasibilityRates {
        joint: 3.265e-4,
        per_constraint: vec![0.03971, 0.03960, 0.20206],
        samples: 10_000_000,
    });
    Ok(p)
}

pub fn make_bnh() -> ProblemDefinition {
    let space = ParameterSpace::new(vec!["x1".into(), "x2".into()], vec![0.0, 0.0], vec![5.0, 3.0]).expect("static box");
    let mut p = ProblemDefinition::new("bnh", space, 2, 2, |x| Outcome {
        objectives: vec![
            4.0 * x[0] * x[0] + 4.0 * x[1] * x[1],
            (x[0] - 5.0).powi(2) + (x[1] - 5.0).powi(2),
        ],
        constraints: vec![
            (x[0] - 5.0).powi(2) + x[1] * x[1] <= 25.0,
            (x[0] - 8.0).powi(2) + (x[1] + 3.0).powi(2) >= 7.7,
        ],
    })
    .with_description("Binh and Korn: two quadratic objectives, two circular constraints");
    p.rates = Some(FeasibilityRates {
        joint: 0.936253,
        per_constraint: vec![],
        samples: 1_000_000,
    });
    p
}

pub fn make_srn() -> ProblemDefinition {
    let space =
        ParameterSpace::new(vec!["x1".into(), "x2".into()], vec![-20.0, -20.0], vec![20.0, 20.0]).expect("static box");
    let mut p = ProblemDefinition::new("srn", space, 2, 2, |x| Outcome {
        objectives: vec![
            2.0 + (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2),
            9.0 * x[0] - (x[1] - 1.0).powi(2),
        ],
        constraints: vec![x[0] * x[0] + x[1] * x[1] <= 225.0, x[0] - 3.0 * x[1] + 10.0 <= 0.0],
    })
    .with_description("Srinivas and Deb: disc and half-plane constraints");
    p.rates = Some(FeasibilityRates {
        joint: 0.162431,
        per_constraint: vec![],
        samples: 1_000_000,
    });
    p
}

pub fn make_tnk() -> ProblemDefinition {
    let pi = std::f64::consts::PI;
    let space = ParameterSpace::new(vec!["x1".into(), "x2".into()], vec![0.0, 0.0], vec![pi, pi]).expect("static box");
    let mut p = ProblemDefinition::new("tnk", space, 2, 2, |x| Outcome {
        objectives: vec![x[0], x[1]],
        constraints: vec![
            x[0] * x[0] + x[1] * x[1] - 1.0 - 0.1 * (16.0 * x[0].atan2(x[1])).cos() >= 0.0,
            (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) <= 0.5,
        ],
    })
    .with_description("Tanaka: identity objectives, wavy non-convex feasible region");
    p.rates = Some(FeasibilityRates {
        joint: 0.050741,
        per_constraint: vec![],
        samples: 1_000_000,
    });
    p
}

pub const PROBLEM_NAMES: [&str; 6] = ["two_sphere", "thin_band", "thin_band_nan", "bnh", "srn", "tnk"];

/// Looks up a problem; `dim` applies to the dimension-generic problems.
pub fn by_name(name: &str, dim: Option<usize>) -> Result<ProblemDefinition> {
    let fixed = |p: ProblemDefinition| match dim {
        Some(d) if d != p.space.dim() => Err(Error::InvalidConfig(format!(
            "problem `{name}` has fixed dimension {}, got {d}",
            p.space.dim()
        ))),
        _ => Ok(p),
    };
    match name {
        "two_sphere" => default_two_sphere(dim.unwrap_or(2)),
        "thin_band" => make_thin_band(dim.unwrap_or(6), false),
        "thin_band_nan" => make_thin_band(dim.unwrap_or(6), true),
        "bnh" => fixed(make_bnh()),
        "srn" => fixed(make_srn()),
        "tnk" => fixed(make_tnk()),
        other => Err(Error::UnknownProblem {
            name: other.to_string(),
            valid: PROBLEM_NAMES.join(", "),
        }),
    }
}

/// The constrained biobjective suite.
pub fn make_constrained_suite() -> Vec<ProblemDefinition> {
    vec![make_bnh(), make_srn(), make_tnk()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_distance_examples() {
        assert_eq!(range_distance_objective(2.0, 1.0, 3.0), 0.0);
        assert_eq!(range_distance_objective(5.0, 1.0, 3.0), 4.0);
        assert_eq!(range_distance_objective(0.5, 1.0, 3.0), 0.25);
        assert!(range_distance_objective(f64::NAN, 1.0, 3.0).is_nan());
        assert!(!range_constraint(f64::NAN, 0.0, 1.0));
    }

    #[test]
    fn two_sphere_examples() {
        let p = default_two_sphere(3).unwrap();
        let o = p.evaluate(&[0.2; 3]).objectives;
        assert!(o[0] == 0.0 && (o[1] - 3.0 * 0.36).abs() < 1e-12);
        let m = p.evaluate(&[0.5; 3]).objectives;
        assert!((m[0] - 0.27).abs() < 1e-12 && (m[1] - 0.27).abs() < 1e-12);
        assert!(make_two_sphere(2, vec![0.3; 2], vec![0.3; 2]).is_err());
    }

    #[test]
    fn segment_points_are_undominated_on_a_grid() {
        let p = default_two_sphere(2).unwrap();
        let grid: Vec<Vec<f64>> = (0..=50)
            .flat_map(|i| (0..=50).map(move |j| p_obj(i as f64 / 50.0, j as f64 / 50.0)))
            .collect();
        fn p_obj(x: f64, y: f64) -> Vec<f64> {
            vec![(x - 0.2).powi(2) + (y - 0.2).powi(2), (x - 0.8).powi(2) + (y - 0.8).powi(2)]
        }
        for t in 0..=10 {
            let s = 0.2 + 0.06 * t as f64;
            let on = p.evaluate(&[s, s]).objectives;
            assert!(!grid.iter().any(|g| crate::domain::dominates_unchecked(g, &on)));
        }
    }

    #[test]
    fn off_segment_points_are_dominated_by_projection() {
        let p = default_two_sphere(2).unwrap();
        for &(x, y) in &[(0.1f64, 0.9f64), (0.5, 0.3), (0.95, 0.1), (0.3, 0.35)] {
            let t = ((x + y) / 2.0).clamp(0.2, 0.8);
            let proj = p.evaluate(&[t, t]).objectives;
            let off = p.evaluate(&[x, y]).objectives;
            assert!(crate::domain::dominates_unchecked(&proj, &off), "({x},{y})");
        }
    }

    #[test]
    fn thin_band_examples() {
        let p = make_thin_band(6, false).unwrap();
        assert_eq!(p.evaluate(&[0.5; 6]).constraints, vec![true; 3]);
        assert!(!p.evaluate(&[0.0; 6]).constraints[2]);
        assert!(make_thin_band(2, false).is_err());
        let nan = make_thin_band(6, true).unwrap();
        assert!(nan.evaluate(&[0.01; 6]).objectives[0].is_nan());
        assert!(nan.evaluate(&[0.5; 6]).objectives[0].is_finite());
        let r = p.rates.unwrap();
        assert!(r.joint < 1e-3 && r.per_constraint.iter().all(|&c| c > 1e-2));
    }

    #[test]
    fn suite_examples() {
        let bnh = make_bnh().evaluate(&[0.0, 0.0]);
        assert_eq!(bnh.objectives, vec![0.0, 50.0]);
        assert_eq!(bnh.constraints, vec![true, true]);
        let tnk = make_tnk().evaluate(&[0.3, 0.3]);
        assert!(!tnk.constraints[0]);
        let srn = make_srn().evaluate(&[-5.0, 5.0]);
        assert_eq!(srn.constraints, vec![true, true]);
        assert_eq!(srn.objectives, vec![2.0 + 49.0 + 16.0, -45.0 - 16.0]);
    }

    #[test]
    fn registry() {
        for name in PROBLEM_NAMES {
            assert_eq!(by_name(name, None).unwrap().name, name);
        }
        assert_eq!(by_name("two_sphere", Some(5)).unwrap().space.dim(), 5);
        let err = by_name("zdt1", None).unwrap_err().to_string();
        assert!(err.contains("thin_band"), "{err}");
        assert!(by_name("bnh", Some(3)).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let p = make_thin_band(4, true).unwrap();
        let x = [0.41, 0.42, 0.43, 0.9];
        assert_eq!(p.evaluate(&x), p.evaluate(&x));
    }
}

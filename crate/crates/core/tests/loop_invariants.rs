use proptest::prelude::*;
use surropt::engine::{self, RunConfig, StopExpression};
use surropt::metrics::NormalizationContext;
use surropt::sensitivity::SensitivityMode;
use surropt::surrogate::SurrogateConfig;
use surropt::{EpochMetrics, Provenance};

fn config(problem: &str) -> RunConfig {
    RunConfig {
        problem: problem.into(),
        initial_samples: 30,
        population: 12,
        generations: 4,
        epochs: 3,
        use_feasolve: true,
        sensitivity: SensitivityMode::Inverted,
        surrogate: SurrogateConfig {
            blocks: 1,
            block_dim: 16,
            folds: 2,
            max_epochs: Some(30),
            ..SurrogateConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn full_loop_keeps_its_bookkeeping() {
    let mut cfg = config("tnk");
    cfg.feasolve.max_iters = 25;
    let h = engine::run(&cfg).unwrap();
    assert_eq!(h.len(), 30 + 3 * 12);
    for epoch in 1..=3 {
        let prov: Vec<Provenance> = h.records().iter().filter(|r| r.epoch == epoch).map(|r| r.provenance).collect();
        assert_eq!(prov.iter().filter(|p| **p == Provenance::Moea).count(), 6);
        assert_eq!(prov.iter().filter(|p| **p == Provenance::Feasolve).count(), 6);
    }
    let archive = h.archive();
    assert!(archive.records().iter().all(|r| r.is_usable_feasible()));
    let feasible: Vec<usize> = h.epoch_metrics().iter().map(|m| m.feasible_count).collect();
    assert!(feasible.windows(2).all(|w| w[0] <= w[1]));
    let hv: Vec<f64> = h.epoch_metrics().iter().map(|m| m.hv_norm).collect();
    assert!(hv.windows(2).all(|w| w[0] <= w[1]), "{hv:?}");
    assert_eq!(hv, engine::hv_series(&h, 2));
}

#[test]
fn stored_hv_uses_the_whole_run_nadir() {
    let h = engine::run(&config("srn")).unwrap();
    let points: Vec<Vec<f64>> = h.records().iter().filter(|r| r.is_usable_feasible()).map(|r| r.objectives.clone()).collect();
    let fronts: Vec<Vec<Vec<f64>>> = (0..=3).map(|e| h.archive_up_to(e).objectives()).collect();
    let ctx = NormalizationContext::from_points(fronts.iter().flatten(), 2).unwrap();
    let last = ctx.hypervolume(&h.archive().objectives()).unwrap();
    assert_eq!(h.epoch_metrics().last().unwrap().hv_norm, last);
    assert!(!points.is_empty());
}

proptest! {
    #[test]
    fn stop_parser_never_panics(src in "[a-z()'<>=!.,0-9 +*/-]{0,40}") {
        if let Ok(expr) = StopExpression::parse(&src) {
            let m = EpochMetrics {
                epoch: 1,
                cumulative_evals: 10,
                hv_norm: 0.5,
                feasible_count: 2,
                nrmse: f64::NAN,
                mode: "o".into(),
                feasolve_steps: 0,
                wall_seconds: 0.0,
                ecov: 0.1,
            };
            let _ = expr.evaluate(&[m]);
        }
    }
}

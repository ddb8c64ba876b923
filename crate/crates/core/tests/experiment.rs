//! Sweep plumbing: determinism across thread counts, report files, aggregation against a
//! sort oracle and the trend checks on hand-built medians.

use proptest::prelude::*;

use exomdp::experiment::{
    aggregate, emit_report, median, percentile_nearest_rank, run_sweep, trend_checks, write_aggregate_csv,
    write_raw_csv, ExperimentConfig, GridPoint, GroundTruthConfig, Panel, SweepConfig, TrialMetrics, TrialResult,
};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        trials: 2,
        sweep: SweepConfig {
            horizon: 1,
            samples: 300,
            decay: 1.0,
            sample_grid: vec![200, 400],
            horizon_grid: vec![0, 1, 2],
            decay_grid: vec![1.0, 2.0],
        },
        ground_truth: GroundTruthConfig {
            eval_states: 40,
            rollouts: 4,
            warmup: 100,
            spacing: 5,
            ..GroundTruthConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn file_bytes(dir: &std::path::Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn sweep_outputs_do_not_depend_on_thread_count() {
    let cfg = small_config();
    let one = run_sweep(&cfg, Some(1)).unwrap();
    let three = run_sweep(&cfg, Some(3)).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let checks = trend_checks(&one.aggregates);
    emit_report(&cfg, &one, &checks, a.path()).unwrap();
    emit_report(&cfg, &three, &trend_checks(&three.aggregates), b.path()).unwrap();
    for name in ["raw.csv", "aggregate.csv", "checks.txt", "manifest.txt"] {
        assert_eq!(file_bytes(a.path(), name), file_bytes(b.path(), name), "{name} differs");
    }
    assert!(a.path().join("timings.csv").exists());
}

#[test]
fn sweep_covers_every_grid_point_and_trial() {
    let cfg = small_config();
    let sweep = run_sweep(&cfg, Some(2)).unwrap();
    let grid = cfg.grid();
    assert_eq!(sweep.results.len(), grid.len() * cfg.trials);
    assert_eq!(sweep.aggregates.len(), grid.len());
    for agg in &sweep.aggregates {
        assert_eq!(agg.count + agg.failures, cfg.trials);
    }
    let raw = {
        let mut buf = Vec::new();
        write_raw_csv(&sweep.results, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    assert_eq!(raw.lines().count(), 1 + sweep.results.len());
    // Common random numbers: a trial uses the same path seed at every grid point.
    for r in &sweep.results {
        assert_eq!(r.seed, cfg.base_seed + r.trial as u64);
    }
}

#[test]
fn config_toml_roundtrip() {
    let cfg = small_config();
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = small_config();
    cfg.trials = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = small_config();
    cfg.delta = 1.5;
    assert!(cfg.validate().is_err());
}

#[test]
fn empty_results_give_header_only_files() {
    let mut buf = Vec::new();
    write_raw_csv(&[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    let mut buf = Vec::new();
    write_aggregate_csv(&[], &[[20.0, 80.0]], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text, "panel,n,horizon,decay,count,failures,median,p20,p80\n");
}

fn point(panel: Panel, n: usize, horizon: usize, decay: f64) -> GridPoint {
    GridPoint { panel, n, horizon, decay }
}

fn result(p: GridPoint, trial: usize, mse: Option<f64>) -> TrialResult {
    TrialResult {
        point: p,
        trial,
        seed: trial as u64,
        burn_in: 0,
        d: 1,
        outcome: mse
            .map(|mse| TrialMetrics { mse, nu: 1.0, residual: 0.0, rank: 1 })
            .ok_or_else(|| "singular".to_string()),
        wall_time: 0.0,
    }
}

#[test]
fn aggregation_skips_failed_trials() {
    let p = point(Panel::Samples, 10, 1, 1.0);
    let results = vec![result(p, 0, Some(3.0)), result(p, 1, None), result(p, 2, Some(1.0))];
    let aggs = aggregate(&results, &[p], &[[40.0, 60.0]]);
    assert_eq!(aggs[0].count, 2);
    assert_eq!(aggs[0].failures, 1);
    assert_eq!(aggs[0].median, 2.0);
}

#[test]
fn trend_checks_on_hand_built_medians() {
    let mut results = Vec::new();
    let mut grid = Vec::new();
    let mut add = |p: GridPoint, m: f64| {
        grid.push(p);
        results.push(result(p, 0, Some(m)));
    };
    for (n, m) in [(100, 3.0), (200, 2.0), (400, 1.0)] {
        add(point(Panel::Samples, n, 1, 1.0), m);
    }
    for (t, m) in [(0, 2.0), (1, 1.0), (2, 0.5), (3, 0.9)] {
        add(point(Panel::Horizon, 400, t, 1.0), m);
    }
    for (r, m) in [(0.5, 2.0), (1.0, 2.0), (2.0, 1.0)] {
        add(point(Panel::Decay, 400, 1, r), m);
    }
    let checks = trend_checks(&aggregate(&results, &grid, &[]));
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");

    // A horizon minimum at the grid edge is not interior.
    let edge: Vec<TrialResult> = results
        .iter()
        .map(|r| match r.point.panel {
            Panel::Horizon if r.point.horizon == 3 => result(r.point, 0, Some(0.1)),
            _ => r.clone(),
        })
        .collect();
    let checks = trend_checks(&aggregate(&edge, &grid, &[]));
    let horizon = checks.iter().find(|c| c.name == "mse_interior_minimum_in_horizon").unwrap();
    assert!(!horizon.passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn nearest_rank_matches_counting_definition(
        values in proptest::collection::vec(-1e3..1e3f64, 1..40), p in 0.5..100.0f64
    ) {
        let got = percentile_nearest_rank(&values, p);
        // Smallest sample with at least p% of the samples at or below it.
        let n = values.len() as f64;
        let oracle = values
            .iter()
            .copied()
            .filter(|&v| values.iter().filter(|&&w| w <= v).count() as f64 >= p / 100.0 * n - 1e-9)
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(got, oracle);
    }

    #[test]
    fn median_splits_the_sample(values in proptest::collection::vec(-1e3..1e3f64, 1..40)) {
        let m = median(&values);
        let below = values.iter().filter(|&&v| v < m).count();
        let above = values.iter().filter(|&&v| v > m).count();
        prop_assert!(below <= values.len() / 2 && above <= values.len() / 2);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
    }
}

//! Seeded pendulum sweeps: pathwise LSTD error against Monte Carlo ground truth as a
//! function of the sample count `N`, the event horizon `T` and the excitation decay rate.
//!
//! Each trial `i` uses the seed `base_seed + i` for its sample path at every grid point, so
//! grid points are compared on common random numbers. Ground truth is computed once per
//! decay rate from its own seed stream. Trials run on a bounded worker pool and are merged
//! in `(panel, grid point, trial)` order, so reports do not depend on scheduling.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{burn_in_length, MixingParams};
use crate::error::{invalid, Error, Result};
use crate::kernel::DecayKernel;
use crate::lstd::{build_design, default_pendulum_features, FeatureMap, LinearValueFunction, LstdReport, PendulumFeatures, SamplePath};
use crate::mdp::pendulum::{EnergyShapingPolicy, PendulumEnv, PendulumSpec, PendulumState};
use crate::mdp::{truncate_window, AugmentedState, PerturbedEnv};
use crate::policy_iter::{item_seed, rollout_return, McConfig, Policy};

/// Ground-truth settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthConfig {
    pub eval_states: usize,
    pub rollouts: usize,
    /// Discounted mass a truncated rollout may ignore: `gamma^H / (1 - gamma)`.
    pub tolerance: f64,
    /// Policy steps before the first evaluation state is recorded.
    pub warmup: usize,
    /// Policy steps between recorded evaluation states.
    pub spacing: usize,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self {
            eval_states: 2000,
            rollouts: 128,
            tolerance: 1e-3,
            warmup: 2_000,
            spacing: 25,
        }
    }
}

/// Grid of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// `T` used by the sample-count and decay panels.
    pub horizon: usize,
    /// `N` used by the horizon and decay panels.
    pub samples: usize,
    /// Excitation decay rate used by the sample-count and horizon panels.
    pub decay: f64,
    pub sample_grid: Vec<usize>,
    pub horizon_grid: Vec<usize>,
    pub decay_grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            samples: 10_000,
            decay: 1.0,
            sample_grid: vec![500, 2_000, 10_000],
            horizon_grid: (0..=6).collect(),
            decay_grid: vec![0.5, 1.0, 2.0],
        }
    }
}

/// Full experiment configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    pub trials: usize,
    pub env: PendulumSpec,
    pub policy: EnergyShapingPolicy,
    pub mark_clip: f64,
    pub sweep: SweepConfig,
    pub ground_truth: GroundTruthConfig,
    pub mixing: MixingParams,
    /// Failure probability used for the burn-in length.
    pub delta: f64,
    /// Percentile bands `[lo, hi]` reported per grid point.
    pub percentiles: Vec<[f64; 2]>,
    /// When set, an exponential injection kernel decays at the swept rate too, so a larger
    /// rate shortens both the excitation and the torque memory of an event.
    pub injection_tracks_decay: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base_seed: 0,
            trials: 20,
            env: PendulumSpec::default(),
            policy: EnergyShapingPolicy::default(),
            mark_clip: 5.0,
            sweep: SweepConfig::default(),
            ground_truth: GroundTruthConfig::default(),
            mixing: MixingParams::default(),
            delta: 0.05,
            percentiles: vec![[40.0, 60.0], [20.0, 80.0]],
            injection_tracks_decay: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be >= 1"));
        }
        let s = &self.sweep;
        if s.sample_grid.is_empty() || s.horizon_grid.is_empty() || s.decay_grid.is_empty() {
            return Err(invalid("sweep", "grids must be non-empty"));
        }
        if s.sample_grid.iter().chain([&s.samples]).any(|&n| n < 2) {
            return Err(invalid("samples", "need at least 2 samples per path"));
        }
        if s.decay_grid.iter().chain([&s.decay]).any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid("decay", "rates must be finite and > 0"));
        }
        let max_t = s.horizon_grid.iter().chain([&s.horizon]).max().copied().unwrap_or(0);
        if max_t + 1 > self.env.context_len {
            return Err(invalid("horizon", "window longer than the environment context"));
        }
        if self.ground_truth.eval_states == 0 || self.ground_truth.rollouts == 0 {
            return Err(invalid("ground_truth", "counts must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", "must lie in (0, 1)"));
        }
        for [lo, hi] in &self.percentiles {
            if !(0.0..=100.0).contains(lo) || !(0.0..=100.0).contains(hi) || lo > hi {
                return Err(invalid("percentiles", "bands need 0 <= lo <= hi <= 100"));
            }
        }
        self.mixing.validate()?;
        self.env_for_decay(s.decay)?;
        Ok(())
    }

    /// Environment with the excitation decay rate replaced by `rate`.
    pub fn env_for_decay(&self, rate: f64) -> Result<PendulumEnv> {
        let mut spec = self.env.clone();
        spec.events.excitation = match spec.events.excitation {
            DecayKernel::Exponential { c, .. } => DecayKernel::exponential(c, rate),
            _ => return Err(invalid("excitation", "decay sweeps need an exponential excitation kernel")),
        };
        if self.injection_tracks_decay {
            if let DecayKernel::Exponential { c, .. } = spec.injection {
                spec.injection = DecayKernel::exponential(c, rate);
            }
        }
        spec.build()
    }

    pub fn features(&self, horizon: usize) -> PendulumFeatures {
        PendulumFeatures {
            mark_clip: self.mark_clip,
            max_speed: self.env.max_speed,
            ..default_pendulum_features(horizon)
        }
    }

    /// Every `(panel, grid point)` of the sweep, in report order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let s = &self.sweep;
        let mut g = Vec::new();
        for &n in &s.sample_grid {
            g.push(GridPoint { panel: Panel::Samples, n, horizon: s.horizon, decay: s.decay });
        }
        for &t in &s.horizon_grid {
            g.push(GridPoint { panel: Panel::Horizon, n: s.samples, horizon: t, decay: s.decay });
        }
        for &r in &s.decay_grid {
            g.push(GridPoint { panel: Panel::Decay, n: s.samples, horizon: s.horizon, decay: r });
        }
        g
    }

    /// Distinct decay rates in first-appearance order.
    fn decays(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for p in self.grid() {
            if !out.iter().any(|r| r.to_bits() == p.decay.to_bits()) {
                out.push(p.decay);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    Samples,
    Horizon,
    Decay,
}

impl Panel {
    pub fn name(&self) -> &'static str {
        match self {
            Panel::Samples => "samples",
            Panel::Horizon => "horizon",
            Panel::Decay => "decay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub panel: Panel,
    pub n: usize,
    pub horizon: usize,
    pub decay: f64,
}

/// Outcome of one trial at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub point: GridPoint,
    pub trial: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub d: usize,
    /// `Err` carries the failure message; the sweep continues past failed trials.
    pub outcome: std::result::Result<TrialMetrics, String>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub mse: f64,
    pub nu: f64,
    pub residual: f64,
    pub rank: usize,
}

/// Evaluation states (full augmented states) and their Monte Carlo values.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub states: Vec<AugmentedState<PendulumState>>,
    pub values: Vec<f64>,
    pub horizon: usize,
}

/// Start of a policy rollout: a start-distribution state with an event context simulated
/// from an empty history.
fn initial_state<R: rand::Rng>(env: &PendulumEnv, rng: &mut R) -> AugmentedState<PendulumState> {
    let ctx = env.sample_context(4 * env.context_len(), rng);
    AugmentedState::new(env.sample_start(rng), ctx)
}

/// Evaluation states from the tail of one long policy rollout (the operational stationary
/// law), each valued by averaging discounted returns of `rollouts` truncated rollouts.
pub fn ground_truth_values<P: Policy<PendulumEnv>>(env: &PendulumEnv, policy: &P, cfg: &GroundTruthConfig, seed: u64) -> Result<GroundTruth> {
    let g = env.gamma();
    let horizon = McConfig::horizon_for(g, cfg.tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = initial_state(env, &mut rng);
    let mut states = Vec::with_capacity(cfg.eval_states);
    let total = cfg.warmup + cfg.spacing.max(1) * cfg.eval_states;
    for t in 0..total {
        if t >= cfg.warmup && (t - cfg.warmup).is_multiple_of(cfg.spacing.max(1)) {
            states.push(x.clone());
        }
        let a = policy.act(env, &x);
        x = env.step(&x, a, &mut rng)?.0;
    }
    let values: Result<Vec<f64>> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = ChaCha8Rng::seed_from_u64(item_seed(seed, i as u64));
            let mut acc = 0.0;
            for _ in 0..cfg.rollouts {
                acc += rollout_return(env, policy, s, horizon, &mut r)?;
            }
            Ok(acc / cfg.rollouts as f64)
        })
        .collect();
    Ok(GroundTruth { states, values: values?, horizon })
}

/// Policy sample path of `n` truncated states after `burn_in` discarded steps.
pub fn collect_path<P: Policy<PendulumEnv>>(env: &PendulumEnv, policy: &P, n: usize, horizon: usize, burn_in: usize, seed: u64) -> Result<SamplePath<PendulumState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = initial_state(env, &mut rng);
    for _ in 0..burn_in {
        let a = policy.act(env, &x);
        x = env.step(&x, a, &mut rng)?.0;
    }
    let mut states = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let a = policy.act(env, &x);
        let (next, r) = env.step(&x, a, &mut rng)?;
        states.push(AugmentedState::new(x.state, truncate_window(&x.event_window, horizon)));
        rewards.push(r);
        x = next;
    }
    Ok(SamplePath { states, rewards, seed, burn_in })
}

/// Mean squared error of a clipped linear value function against ground truth.
pub fn value_mse<F: FeatureMap<PendulumState>>(v: &LinearValueFunction, features: &F, horizon: usize, truth: &GroundTruth) -> f64 {
    let n = truth.states.len() as f64;
    truth
        .states
        .iter()
        .zip(&truth.values)
        .map(|(x, &target)| {
            let trunc = AugmentedState::new(x.state, truncate_window(&x.event_window, horizon));
            (v.evaluate(features, &trunc) - target).powi(2)
        })
        .sum::<f64>()
        / n
}

fn run_trial(cfg: &ExperimentConfig, env: &PendulumEnv, truth: &GroundTruth, point: GridPoint, trial: usize) -> TrialResult {
    let start = Instant::now();
    let seed = cfg.base_seed.wrapping_add(trial as u64);
    let features = cfg.features(point.horizon);
    let burn_in = burn_in_length(point.n, cfg.delta, &cfg.mixing).unwrap_or(0);
    let outcome = (|| -> Result<TrialMetrics> {
        let path = collect_path(env, &cfg.policy, point.n, point.horizon, burn_in, seed)?;
        let design = build_design(&path, &features)?;
        let report = LstdReport::fit(&design, env.gamma())?;
        let v = LinearValueFunction::clipped(report.weights.clone(), env.gamma());
        let mse = value_mse(&v, &features, point.horizon, truth);
        if !mse.is_finite() {
            return Err(Error::NonFinite("mse"));
        }
        Ok(TrialMetrics { mse, nu: report.nu, residual: report.residual, rank: report.rank })
    })()
    .map_err(|e| e.to_string());
    TrialResult {
        point,
        trial,
        seed,
        burn_in,
        d: features.dim(),
        outcome,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

/// Median and percentile bands of one grid point over successful trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub point: GridPoint,
    pub count: usize,
    pub failures: usize,
    pub median: f64,
    /// `(lo, hi, value_lo, value_hi)` per configured band.
    pub bands: Vec<(f64, f64, f64, f64)>,
}

/// Median of a sample: the middle order statistic, or the mean of the two middle ones.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value (the smallest for
/// `p = 0`).
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Results of a whole sweep.
#[derive(Debug, Clone)]
pub struct SweepResults {
    pub results: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
    pub truth_horizon: usize,
}

pub fn aggregate(results: &[TrialResult], grid: &[GridPoint], percentiles: &[[f64; 2]]) -> Vec<Aggregate> {
    grid.iter()
        .map(|&point| {
            let here: Vec<&TrialResult> = results.iter().filter(|r| r.point == point).collect();
            let mses: Vec<f64> = here.iter().filter_map(|r| r.outcome.as_ref().ok().map(|m| m.mse)).collect();
            Aggregate {
                point,
                count: mses.len(),
                failures: here.len() - mses.len(),
                median: median(&mses),
                bands: percentiles
                    .iter()
                    .map(|&[lo, hi]| (lo, hi, percentile_nearest_rank(&mses, lo), percentile_nearest_rank(&mses, hi)))
                    .collect(),
            }
        })
        .collect()
}

/// Runs every `(grid point, trial)` on a pool of `jobs` threads (all cores when `None`).
pub fn run_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<SweepResults> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        let decays = cfg.decays();
        let mut truths = Vec::with_capacity(decays.len());
        for (k, &rate) in decays.iter().enumerate() {
            let env = cfg.env_for_decay(rate)?;
            let seed = item_seed(cfg.base_seed ^ 0x6A09_E667_F3BC_C908, k as u64);
            truths.push((env.clone(), ground_truth_values(&env, &cfg.policy, &cfg.ground_truth, seed)?));
        }
        let grid = cfg.grid();
        let jobs: Vec<(GridPoint, usize)> = grid.iter().flat_map(|&p| (0..cfg.trials).map(move |t| (p, t))).collect();
        let results: Vec<TrialResult> = jobs
            .par_iter()
            .map(|&(point, trial)| {
                let k = decays.iter().position(|r| r.to_bits() == point.decay.to_bits()).expect("decay in grid");
                let (env, truth) = &truths[k];
                run_trial(cfg, env, truth, point, trial)
            })
            .collect();
        let aggregates = aggregate(&results, &grid, &cfg.percentiles);
        Ok(SweepResults {
            results,
            aggregates,
            truth_horizon: truths.first().map(|t| t.1.horizon).unwrap_or(0),
        })
    })
}

/// One qualitative trend check.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn panel_medians(aggs: &[Aggregate], panel: Panel) -> Vec<(GridPoint, f64)> {
    aggs.iter().filter(|a| a.point.panel == panel).map(|a| (a.point, a.median)).collect()
}

/// The three shape checks on median MSE: strictly decreasing in `N`; a minimum over `T`
/// at an interior horizon `1 <= T* <= 4` (strictly below both ends); non-increasing in the
/// decay rate.
pub fn trend_checks(aggs: &[Aggregate]) -> Vec<TrendCheck> {
    let fmt = |v: &[(GridPoint, f64)], key: fn(&GridPoint) -> String| -> String {
        v.iter().map(|(p, m)| format!("{}:{:.6e}", key(p), m)).collect::<Vec<_>>().join(" ")
    };
    let mut out = Vec::new();

    let mut s = panel_medians(aggs, Panel::Samples);
    s.sort_by_key(|(p, _)| p.n);
    let dec = s.len() >= 2 && s.windows(2).all(|w| w[1].1 < w[0].1);
    out.push(TrendCheck {
        name: "mse_decreases_with_samples",
        passed: dec,
        detail: fmt(&s, |p| format!("N={}", p.n)),
    });

    let mut h = panel_medians(aggs, Panel::Horizon);
    h.sort_by_key(|(p, _)| p.horizon);
    let interior = h
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, (p, m))| {
            let first = h.first().map(|x| x.1).unwrap_or(f64::NAN);
            let last = h.last().map(|x| x.1).unwrap_or(f64::NAN);
            i > 0 && i + 1 < h.len() && (1..=4).contains(&p.horizon) && *m < first && *m < last
        })
        .unwrap_or(false);
    out.push(TrendCheck {
        name: "mse_interior_minimum_in_horizon",
        passed: interior,
        detail: fmt(&h, |p| format!("T={}", p.horizon)),
    });

    let mut d = panel_medians(aggs, Panel::Decay);
    d.sort_by(|a, b| a.0.decay.total_cmp(&b.0.decay));
    let nonincreasing = d.len() >= 2 && d.windows(2).all(|w| w[1].1 <= w[0].1);
    out.push(TrendCheck {
        name: "mse_nonincreasing_in_decay",
        passed: nonincreasing,
        detail: fmt(&d, |p| format!("rate={}", p.decay)),
    });
    out
}

/// Raw per-trial CSV: `panel,n,horizon,decay,trial,seed,burn_in,d,status,mse,nu,residual,rank`.
/// Deterministic given the configuration; wall times go to [`write_timings_csv`].
pub fn write_raw_csv<W: Write>(results: &[TrialResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["panel", "n", "horizon", "decay", "trial", "seed", "burn_in", "d", "status", "mse", "nu", "residual", "rank"])?;
    for r in results {
        let p = &r.point;
        let (status, mse, nu, res, rank) = match &r.outcome {
            Ok(m) => ("ok".to_string(), m.mse.to_string(), m.nu.to_string(), m.residual.to_string(), m.rank.to_string()),
            Err(e) => (format!("error: {e}"), String::new(), String::new(), String::new(), String::new()),
        };
        w.write_record([
            p.panel.name().to_string(),
            p.n.to_string(),
            p.horizon.to_string(),
            p.decay.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.burn_in.to_string(),
            r.d.to_string(),
            status,
            mse,
            nu,
            res,
            rank,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `panel,n,horizon,decay,trial,wall_time_s`.
pub fn write_timings_csv<W: Write>(results: &[TrialResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["panel", "n", "horizon", "decay", "trial", "wall_time_s"])?;
    for r in results {
        let p = &r.point;
        w.write_record([
            p.panel.name().to_string(),
            p.n.to_string(),
            p.horizon.to_string(),
            p.decay.to_string(),
            r.trial.to_string(),
            format!("{:.6}", r.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregate CSV: `panel,n,horizon,decay,count,failures,median,p<lo>,p<hi>,...`.
pub fn write_aggregate_csv<W: Write>(aggs: &[Aggregate], percentiles: &[[f64; 2]], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["panel", "n", "horizon", "decay", "count", "failures", "median"].iter().map(|s| s.to_string()).collect();
    for [lo, hi] in percentiles {
        header.push(format!("p{lo}"));
        header.push(format!("p{hi}"));
    }
    w.write_record(&header)?;
    for a in aggs {
        let p = &a.point;
        let mut row = vec![
            p.panel.name().to_string(),
            p.n.to_string(),
            p.horizon.to_string(),
            p.decay.to_string(),
            a.count.to_string(),
            a.failures.to_string(),
            a.median.to_string(),
        ];
        for (_, _, vlo, vhi) in &a.bands {
            row.push(vlo.to_string());
            row.push(vhi.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Interpretation choices recorded in every manifest.
pub const INTERPRETATIONS: &[&str] = &[
    "policy: fixed energy-shaping swing-up controller with linear balancing near upright",
    "decay sweep: the swept rate replaces the excitation decay and, with injection_tracks_decay, the injection decay",
    "events: mark-weighted torque added to the agent torque, lag weights from env.injection, scaled by env.event_gain and clipped to env.disturbance_cap",
    "episodes: none; one continuing path from the start law, mixed by the event kicks (env.reset_prob = 0 by default; a positive value redraws the physical state from the start law at that rate)",
    "ground truth: Monte Carlo discounted returns from full augmented states sampled along one long policy rollout",
    "median: mean of the two middle order statistics for even counts; percentile bands: nearest rank",
];

/// Writes `raw.csv`, `aggregate.csv`, `timings.csv`, `checks.txt` and `manifest.txt` into `dir`.
pub fn emit_report(cfg: &ExperimentConfig, sweep: &SweepResults, checks: &[TrendCheck], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let raw = dir.join("raw.csv");
    write_raw_csv(&sweep.results, std::fs::File::create(&raw)?)?;
    let agg = dir.join("aggregate.csv");
    write_aggregate_csv(&sweep.aggregates, &cfg.percentiles, std::fs::File::create(&agg)?)?;
    let timings = dir.join("timings.csv");
    write_timings_csv(&sweep.results, std::fs::File::create(&timings)?)?;

    let checks_path = dir.join("checks.txt");
    let mut text = String::new();
    for c in checks {
        writeln!(text, "{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail).unwrap();
    }
    std::fs::write(&checks_path, text)?;

    let manifest = dir.join("manifest.txt");
    let mut m = String::new();
    writeln!(m, "# exomdp experiment manifest").unwrap();
    writeln!(m, "exomdp_version = {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(m, "toolchain = {}", crate::TOOLCHAIN).unwrap();
    writeln!(m, "target = {}-{}", std::env::consts::ARCH, std::env::consts::OS).unwrap();
    writeln!(m, "base_seed = {}", cfg.base_seed).unwrap();
    writeln!(m, "ground_truth_rollout_horizon = {}", sweep.truth_horizon).unwrap();
    for i in INTERPRETATIONS {
        writeln!(m, "interpretation = {i}").unwrap();
    }
    writeln!(m, "\n# configuration\n{}", cfg.to_toml()?).unwrap();
    std::fs::write(&manifest, m)?;
    Ok(vec![raw, agg, timings, checks_path, manifest])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_percentiles_by_sorting() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(percentile_nearest_rank(&[3.0], 20.0), 3.0);
        let v: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64).collect();
        // sorted: 0..19
        assert_eq!(median(&v), 9.5);
        assert_eq!(percentile_nearest_rank(&v, 20.0), 3.0);
        assert_eq!(percentile_nearest_rank(&v, 80.0), 15.0);
        assert_eq!(percentile_nearest_rank(&v, 40.0), 7.0);
        assert_eq!(percentile_nearest_rank(&v, 60.0), 11.0);
        assert_eq!(percentile_nearest_rank(&v, 0.0), 0.0);
        assert_eq!(percentile_nearest_rank(&v, 100.0), 19.0);
    }

    #[test]
    fn empty_results_give_headers_only() {
        let mut buf = Vec::new();
        write_raw_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("trials = 3\n[sweep]\nhorizon = 2\n").unwrap();
        assert_eq!(partial.trials, 3);
        assert_eq!(partial.sweep.samples, 10_000);
        assert!(ExperimentConfig::from_toml("trials = 0").is_err());
        assert!(ExperimentConfig::from_toml("[sweep]\nhorizon_grid = []").is_err());
    }

    #[test]
    fn trend_check_shapes() {
        let mk = |panel, n, horizon, decay, median| Aggregate {
            point: GridPoint { panel, n, horizon, decay },
            count: 1,
            failures: 0,
            median,
            bands: vec![],
        };
        let aggs = vec![
            mk(Panel::Samples, 500, 5, 1.0, 3.0),
            mk(Panel::Samples, 2000, 5, 1.0, 2.0),
            mk(Panel::Horizon, 10, 0, 1.0, 5.0),
            mk(Panel::Horizon, 10, 2, 1.0, 1.0),
            mk(Panel::Horizon, 10, 6, 1.0, 2.0),
            mk(Panel::Decay, 10, 5, 0.5, 2.0),
            mk(Panel::Decay, 10, 5, 1.0, 2.0),
        ];
        assert!(trend_checks(&aggs).iter().all(|c| c.passed));
        let mono = vec![mk(Panel::Horizon, 10, 0, 1.0, 5.0), mk(Panel::Horizon, 10, 6, 1.0, 1.0)];
        assert!(!trend_checks(&mono)[1].passed);
    }
}

//! Approximate policy iteration over event windows.
//!
//! Policies act on `(s, x_0..x_T)`. Evaluation averages the value of the policy over
//! completions of the older marks drawn from the event process; improvement is greedy over
//! the action grid with the same completions for the expectation. On a
//! [`FiniteChainEnv`] both steps have an exact variant that enumerates completions and
//! transitions through the oracle; the Monte Carlo variant uses rollouts instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bellman_error_threshold, policy_improvement_slack};
use crate::error::{invalid, Error, Result};
use crate::linalg::{pinv_solve, Mat, SVD_CUTOFF};
use crate::lstd::{FeatureMap, LinearValueFunction};
use crate::mdp::finite::{FiniteChainEnv, MARK_VALUES};
use crate::mdp::pendulum::{EnergyShapingPolicy, PendulumEnv};
use crate::mdp::{truncate_window, AugmentedState, PerturbedEnv};
use crate::oracle::{
    bellman_error_map, exact_policy_value, lift_window_policy, truncate_index,
    FiniteAugmentedChain,
};

/// Slack used when comparing exact values, absorbing solver round-off.
pub const VALUE_TOL: f64 = 1e-10;

/// A deterministic policy on augmented states.
pub trait Policy<E: PerturbedEnv + ?Sized>: Sync {
    fn act(&self, env: &E, x: &AugmentedState<E::State>) -> E::Action;
}

impl Policy<PendulumEnv> for EnergyShapingPolicy {
    fn act(&self, env: &PendulumEnv, x: &AugmentedState<crate::mdp::PendulumState>) -> f64 {
        EnergyShapingPolicy::act(self, env, &x.state)
    }
}

/// Monte Carlo budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    /// Completions of the older marks per evaluated state.
    pub n_completions: usize,
    /// Rollouts per completion in evaluation, samples per action in improvement.
    pub n_transition_samples: usize,
    pub rollout_horizon: usize,
    /// Largest allowed discounted mass beyond the rollout horizon.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_completions: 8,
            n_transition_samples: 8,
            rollout_horizon: 200,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl McConfig {
    /// `gamma^H / (1 - gamma)`, the value mass a rollout of length `H` ignores.
    pub fn tail_bound(&self, gamma: f64) -> f64 {
        gamma.powi(self.rollout_horizon as i32) / (1.0 - gamma)
    }

    /// Smallest horizon whose ignored mass is at most `tolerance`.
    pub fn horizon_for(gamma: f64, tolerance: f64) -> usize {
        if gamma == 0.0 {
            return 1;
        }
        ((tolerance * (1.0 - gamma)).ln() / gamma.ln()).ceil().max(1.0) as usize
    }

    pub fn validate(&self, gamma: f64) -> Result<()> {
        if self.n_completions == 0 || self.n_transition_samples == 0 || self.rollout_horizon == 0 {
            return Err(invalid("mc", "all sample counts must be >= 1"));
        }
        if self.tail_bound(gamma) > self.tolerance {
            return Err(invalid(
                "rollout_horizon",
                format!(
                    "gamma^H/(1-gamma) = {:.3e} exceeds the tolerance {:.3e}; need H >= {}",
                    self.tail_bound(gamma),
                    self.tolerance,
                    Self::horizon_for(gamma, self.tolerance)
                ),
            ));
        }
        Ok(())
    }
}

/// Discounted return of `policy` over `horizon` steps from `start`.
pub fn rollout_return<E, P, R>(env: &E, policy: &P, start: &AugmentedState<E::State>, horizon: usize, rng: &mut R) -> Result<f64>
where
    E: PerturbedEnv,
    P: Policy<E> + ?Sized,
    R: Rng + ?Sized,
{
    let g = env.gamma();
    let mut x = start.clone();
    let (mut total, mut discount) = (0.0, 1.0);
    for _ in 0..horizon {
        let a = policy.act(env, &x);
        let (next, r) = env.step(&x, a, rng)?;
        total += discount * r;
        discount *= g;
        x = next;
    }
    Ok(total)
}

/// Monte Carlo estimate of the completion-averaged value at a truncated state: older marks
/// are drawn from the event process, then `n_transition_samples` rollouts are run from
/// each completion.
pub fn mc_window_value<E, P, R>(env: &E, policy: &P, x: &AugmentedState<E::State>, mc: &McConfig, rng: &mut R) -> Result<f64>
where
    E: PerturbedEnv,
    P: Policy<E> + ?Sized,
    R: Rng + ?Sized,
{
    let mut acc = 0.0;
    for _ in 0..mc.n_completions {
        let full = AugmentedState::new(x.state.clone(), env.sample_completion(&x.event_window, rng));
        for _ in 0..mc.n_transition_samples {
            acc += rollout_return(env, policy, &full, mc.rollout_horizon, rng)?;
        }
    }
    Ok(acc / (mc.n_completions * mc.n_transition_samples) as f64)
}

/// Per-item stream seed, so parallel evaluation is independent of scheduling.
pub fn item_seed(seed: u64, item: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ item.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Table policy over truncated states of a finite chain, indexed
/// `s * 3^(T+1) + window_code` (window capped at the chain's own window).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub horizon: usize,
    pub n_states: usize,
    pub n_windows: usize,
    pub actions: Vec<usize>,
}

impl WindowPolicy {
    pub fn constant(env: &FiniteChainEnv, horizon: usize, action: usize) -> Self {
        let keep = (horizon + 1).min(env.window());
        let n_windows = 3usize.pow(keep as u32);
        Self {
            horizon,
            n_states: env.n_states(),
            n_windows,
            actions: vec![action; env.n_states() * n_windows],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `(s, truncated augmented state)` of a table index.
    pub fn truncated_state(&self, index: usize) -> AugmentedState<usize> {
        let (s, mut w) = (index / self.n_windows, index % self.n_windows);
        let mut window = Vec::new();
        let mut n = self.n_windows;
        while n > 1 {
            window.push(MARK_VALUES[w % 3]);
            w /= 3;
            n /= 3;
        }
        AugmentedState::new(s, truncate_window(&window, self.horizon))
    }

    pub fn index_of(&self, env: &FiniteChainEnv, x: &AugmentedState<usize>) -> usize {
        let codes = env.codes_of(&x.event_window);
        let keep = (self.horizon + 1).min(env.window());
        x.state * self.n_windows + FiniteChainEnv::encode_window(&codes[..keep])
    }
}

impl Policy<FiniteChainEnv> for WindowPolicy {
    fn act(&self, env: &FiniteChainEnv, x: &AugmentedState<usize>) -> usize {
        self.actions[self.index_of(env, x)]
    }
}

/// Completion law as `(window-code offset of the older block, probability)`.
fn completion_offsets(env: &FiniteChainEnv, horizon: usize) -> Vec<(usize, f64)> {
    let keep = (horizon + 1).min(env.window());
    let recent = 3usize.pow(keep as u32);
    env.completion_law(horizon)
        .into_iter()
        .map(|(codes, p)| (recent * FiniteChainEnv::encode_window(&codes), p))
        .collect()
}

/// Exact evaluation: values on the full chain and their completion averages per truncated
/// state.
#[derive(Debug, Clone)]
pub struct ExactEvaluation {
    pub full_values: Vec<f64>,
    pub window_values: Vec<f64>,
}

pub fn evaluate_policy_exact(env: &FiniteChainEnv, policy: &WindowPolicy) -> Result<ExactEvaluation> {
    let chain = FiniteAugmentedChain::build(env)?;
    evaluate_on_chain(env, &chain, policy)
}

fn evaluate_on_chain(env: &FiniteChainEnv, chain: &FiniteAugmentedChain, policy: &WindowPolicy) -> Result<ExactEvaluation> {
    let full_policy = lift_window_policy(chain, policy.horizon, &policy.actions)?;
    let full_values = exact_policy_value(chain, &full_policy)?;
    let offsets = completion_offsets(env, policy.horizon);
    let window_values = (0..policy.len())
        .map(|i| {
            let (s, w) = (i / policy.n_windows, i % policy.n_windows);
            offsets.iter().map(|&(off, p)| p * full_values[chain.index(s, w + off)]).sum()
        })
        .collect();
    Ok(ExactEvaluation {
        full_values,
        window_values,
    })
}

/// Expected `r + gamma V(truncated next)` at a truncated state, exact over completions,
/// transitions and events.
#[allow(clippy::too_many_arguments)]
fn exact_lookahead(
    env: &FiniteChainEnv,
    chain: &FiniteAugmentedChain,
    offsets: &[(usize, f64)],
    horizon: usize,
    n_windows: usize,
    index: usize,
    action: usize,
    values: &[f64],
) -> f64 {
    let (s, w) = (index / n_windows, index % n_windows);
    let g = env.gamma();
    offsets
        .iter()
        .map(|&(off, p)| {
            let full = chain.index(s, w + off);
            let future: f64 = chain
                .row(full, action)
                .iter()
                .map(|&(j, q)| q * values[truncate_index(chain, j, horizon)])
                .sum();
            p * (chain.reward(full, action) + g * future)
        })
        .sum()
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (a, q) in values.enumerate() {
        if best.is_none_or(|(_, b)| q > b) {
            best = Some((a, q));
        }
    }
    best.map(|(a, _)| a).ok_or(Error::EmptyGrid)
}

/// Greedy window policy with exact expectations against window values `values`.
pub fn improve_policy_exact(env: &FiniteChainEnv, values: &[f64], horizon: usize) -> Result<WindowPolicy> {
    let chain = FiniteAugmentedChain::build(env)?;
    improve_on_chain(env, &chain, values, horizon)
}

fn improve_on_chain(env: &FiniteChainEnv, chain: &FiniteAugmentedChain, values: &[f64], horizon: usize) -> Result<WindowPolicy> {
    let mut policy = WindowPolicy::constant(env, horizon, 0);
    if values.len() != policy.len() {
        return Err(Error::Dimension(format!(
            "{} window values for {} truncated states",
            values.len(),
            policy.len()
        )));
    }
    let offsets = completion_offsets(env, horizon);
    for i in 0..policy.len() {
        policy.actions[i] = argmax_lowest(
            (0..env.n_actions()).map(|a| exact_lookahead(env, chain, &offsets, horizon, policy.n_windows, i, a, values)),
        )?;
    }
    Ok(policy)
}

/// Monte Carlo window values at every truncated state, evaluated in parallel with
/// per-state seeds.
pub fn evaluate_policy(env: &FiniteChainEnv, policy: &WindowPolicy, mc: &McConfig) -> Result<Vec<f64>> {
    mc.validate(env.gamma())?;
    (0..policy.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(mc.seed, i as u64));
            mc_window_value(env, policy, &policy.truncated_state(i), mc, &mut rng)
        })
        .collect()
}

/// Greedy window policy with Monte Carlo expectations: `n_completions` completions, each
/// with `n_transition_samples` sampled steps per action. Common random numbers are used
/// across actions so ties resolve toward the lowest index.
pub fn improve_policy(env: &FiniteChainEnv, values: &[f64], horizon: usize, mc: &McConfig) -> Result<WindowPolicy> {
    let grid = env.action_grid();
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut policy = WindowPolicy::constant(env, horizon, 0);
    if values.len() != policy.len() {
        return Err(Error::Dimension("window values".into()));
    }
    let actions: Result<Vec<usize>> = (0..policy.len())
        .into_par_iter()
        .map(|i| {
            let x = policy.truncated_state(i);
            let seed = item_seed(mc.seed ^ 0xA5A5, i as u64);
            let q = grid.iter().map(|&a| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                lookahead_mc(env, &x, a, mc, &mut rng, |y| values[policy.index_of(env, y)])
            });
            let q: Result<Vec<f64>> = q.collect();
            argmax_lowest(q?.into_iter())
        })
        .collect();
    policy.actions = actions?;
    Ok(policy)
}

/// Sampled `E[r + gamma V(truncated next)]` from a truncated state.
pub fn lookahead_mc<E, R, V>(env: &E, x: &AugmentedState<E::State>, action: E::Action, mc: &McConfig, rng: &mut R, value: V) -> Result<f64>
where
    E: PerturbedEnv,
    R: Rng + ?Sized,
    V: Fn(&AugmentedState<E::State>) -> f64,
{
    let g = env.gamma();
    let keep = x.event_window.len();
    let mut acc = 0.0;
    for _ in 0..mc.n_completions {
        let full = AugmentedState::new(x.state.clone(), env.sample_completion(&x.event_window, rng));
        for _ in 0..mc.n_transition_samples {
            let (next, r) = env.step(&full, action, rng)?;
            let trunc = AugmentedState::new(next.state, next.event_window[..keep.min(next.event_window.len())].to_vec());
            acc += r + g * value(&trunc);
        }
    }
    Ok(acc / (mc.n_completions * mc.n_transition_samples) as f64)
}

/// Diagnostics of one policy-iteration step `pi_k -> pi_{k+1}`.
#[derive(Debug, Clone, Serialize)]
pub struct PiIteration {
    pub k: usize,
    pub policy: WindowPolicy,
    /// Estimated (or exact) completion-averaged values of `pi_k` per truncated state.
    pub window_values: Vec<f64>,
    /// Exact values of `pi_k` on the full chain.
    pub exact_values: Vec<f64>,
    /// `|T V^{pi_k} - V^{pi_k}|` on the full chain.
    pub bellman_errors: Vec<f64>,
    /// `min (V^{pi_{k+1}} - V^{pi_k})`, absent on the last iteration.
    pub min_change: Option<f64>,
    /// States where neither improvement nor a small Bellman error holds.
    pub guarantee_violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PiReport {
    pub horizon: usize,
    pub gamma: f64,
    pub exact_evaluation: bool,
    pub bellman_threshold: f64,
    pub improvement_slack: f64,
    pub iterations: Vec<PiIteration>,
    pub converged: bool,
}

impl PiReport {
    pub fn final_policy(&self) -> &WindowPolicy {
        &self.iterations.last().expect("at least one iteration").policy
    }

    /// Total states violating the improvement-or-small-Bellman-error guarantee.
    pub fn guarantee_violations(&self) -> usize {
        self.iterations.iter().map(|it| it.guarantee_violations).sum()
    }

    /// Smallest value change over all iterations (`+inf` with a single iteration).
    pub fn min_change(&self) -> f64 {
        self.iterations.iter().filter_map(|it| it.min_change).fold(f64::INFINITY, f64::min)
    }

    pub fn slack_respected(&self) -> bool {
        self.min_change() >= -self.improvement_slack - VALUE_TOL
    }

    /// Per-iteration CSV: `k,mean_value,min_value,max_bellman_error,min_change,violations,policy_changes`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "mean_value", "min_value", "max_bellman_error", "min_change", "violations", "policy_changes"])?;
        for (idx, it) in self.iterations.iter().enumerate() {
            let n = it.exact_values.len() as f64;
            let mean = it.exact_values.iter().sum::<f64>() / n;
            let min = it.exact_values.iter().cloned().fold(f64::INFINITY, f64::min);
            let maxb = it.bellman_errors.iter().cloned().fold(0.0, f64::max);
            let changes = self
                .iterations
                .get(idx + 1)
                .map(|nx| nx.policy.actions.iter().zip(&it.policy.actions).filter(|(a, b)| a != b).count())
                .unwrap_or(0);
            w.write_record([
                it.k.to_string(),
                mean.to_string(),
                min.to_string(),
                maxb.to_string(),
                it.min_change.map(|c| c.to_string()).unwrap_or_default(),
                it.guarantee_violations.to_string(),
                changes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs policy iteration from the all-zeros policy for at most `k_max` improvement steps,
/// stopping once the policy repeats. With `mc = None` evaluation and improvement are exact.
/// Exact values and Bellman errors of every iterate are recorded, together with the number
/// of states that neither improve nor have a Bellman error below the guarantee threshold.
pub fn run_policy_iteration(env: &FiniteChainEnv, horizon: usize, k_max: usize, mc: Option<&McConfig>) -> Result<PiReport> {
    if k_max == 0 {
        return Err(invalid("k_max", "must be >= 1"));
    }
    let chain = FiniteAugmentedChain::build(env)?;
    let spec = env.decay_spec();
    let g = env.gamma();
    let threshold = bellman_error_threshold(&spec, g, horizon)?;
    let slack = policy_improvement_slack(&spec, g, horizon)?;
    let mut policy = WindowPolicy::constant(env, horizon, 0);
    let mut iterations: Vec<PiIteration> = Vec::new();
    let mut converged = false;
    for k in 0..=k_max {
        let exact = evaluate_on_chain(env, &chain, &policy)?;
        let window_values = match mc {
            None => exact.window_values.clone(),
            Some(cfg) => evaluate_policy(env, &policy, &McConfig { seed: item_seed(cfg.seed, k as u64), ..*cfg })?,
        };
        let full_policy = lift_window_policy(&chain, horizon, &policy.actions)?;
        let bellman_errors = bellman_error_map(&chain, &full_policy)?;
        if let Some(prev) = iterations.last_mut() {
            let mut min_change = f64::INFINITY;
            let mut violations = 0;
            for i in 0..chain.len() {
                let change = exact.full_values[i] - prev.exact_values[i];
                min_change = min_change.min(change);
                if change < -VALUE_TOL && prev.bellman_errors[i] >= threshold {
                    violations += 1;
                }
            }
            prev.min_change = Some(min_change);
            prev.guarantee_violations = violations;
        }
        let repeated = iterations.last().is_some_and(|p| p.policy == policy);
        iterations.push(PiIteration {
            k,
            policy: policy.clone(),
            window_values: window_values.clone(),
            exact_values: exact.full_values,
            bellman_errors,
            min_change: None,
            guarantee_violations: 0,
        });
        if repeated {
            converged = true;
            break;
        }
        if k == k_max {
            break;
        }
        policy = match mc {
            None => improve_on_chain(env, &chain, &window_values, horizon)?,
            Some(cfg) => improve_policy(env, &window_values, horizon, &McConfig { seed: item_seed(cfg.seed ^ 0x5A5A, k as u64), ..*cfg })?,
        };
    }
    Ok(PiReport {
        horizon,
        gamma: g,
        exact_evaluation: mc.is_none(),
        bellman_threshold: threshold,
        improvement_slack: slack,
        iterations,
        converged,
    })
}

/// Greedy policy over an action grid against a linear value function of truncated states.
///
/// The expectation is sampled with a stream seeded from the state itself, so the policy is a
/// deterministic function of `(state, x_0..x_T)`.
pub struct GreedyPolicy<E: PerturbedEnv, F> {
    pub value: LinearValueFunction,
    pub features: F,
    pub horizon: usize,
    pub grid: Vec<E::Action>,
    pub mc: McConfig,
}

fn state_seed<S: std::fmt::Debug>(seed: u64, x: &AugmentedState<S>) -> u64 {
    // FNV-1a over the debug rendering, which includes every float bit-exactly
    let text = format!("{:?}|{:?}", x.state, x.event_window);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    item_seed(seed, h)
}

impl<E, F> Policy<E> for GreedyPolicy<E, F>
where
    E: PerturbedEnv,
    F: FeatureMap<E::State>,
{
    fn act(&self, env: &E, x: &AugmentedState<E::State>) -> E::Action {
        let trunc = AugmentedState::new(x.state.clone(), truncate_window(&x.event_window, self.horizon));
        let seed = state_seed(self.mc.seed, &trunc);
        let mut best: Option<(E::Action, f64)> = None;
        for &a in &self.grid {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = lookahead_mc(env, &trunc, a, &self.mc, &mut rng, |y| self.value.evaluate(&self.features, y))
                .unwrap_or(f64::NEG_INFINITY);
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((a, q));
            }
        }
        best.expect("non-empty grid").0
    }
}

/// Least-squares linear fit of `targets` on the features of `states`.
pub fn fit_linear_value<S, F: FeatureMap<S>>(features: &F, states: &[AugmentedState<S>], targets: &[f64], clip: Option<f64>) -> Result<LinearValueFunction> {
    if states.len() != targets.len() || states.is_empty() {
        return Err(Error::Dimension("need one target per state".into()));
    }
    let d = features.dim();
    let mut phi = Mat::zeros(states.len(), d);
    for (i, x) in states.iter().enumerate() {
        features.eval_into(x, phi.row_mut(i));
    }
    let sol = pinv_solve(&phi, targets, SVD_CUTOFF)?;
    Ok(LinearValueFunction { weights: sol.x, clip })
}

/// Monte Carlo evaluation of `policy` at truncated `states`, then a linear fit: the
/// function-approximation form of the evaluation step used for continuous states.
pub fn evaluate_policy_linear<E, P, F>(env: &E, policy: &P, features: &F, states: &[AugmentedState<E::State>], mc: &McConfig) -> Result<(LinearValueFunction, Vec<f64>)>
where
    E: PerturbedEnv,
    P: Policy<E>,
    F: FeatureMap<E::State>,
{
    mc.validate(env.gamma())?;
    let targets: Result<Vec<f64>> = states
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(mc.seed, i as u64));
            mc_window_value(env, policy, x, mc, &mut rng)
        })
        .collect();
    let targets = targets?;
    let v = fit_linear_value(features, states, &targets, Some(1.0 / (1.0 - env.gamma())))?;
    Ok((v, targets))
}

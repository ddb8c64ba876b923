//! Exact dynamic programming on the finite augmented chain of a [`FiniteChainEnv`].
//!
//! Augmented states are `(s, window)` with index `s * 3^W + window_code`. Every row is
//! built by enumerating the next mark and the next state, so the chain is the exact closure
//! of the environment under a window of length `W`. With an influence horizon `T`, marks at
//! positions beyond `T` are ignored by both the kernel and the event law, giving the
//! truncated-influence model the truncation bounds are stated for.
//!
//! Transition rows are stored sparsely (at most `3 * n_states` entries each). Policy values
//! come from a dense LU solve on chains up to [`DENSE_SOLVE_LIMIT`] states, and from
//! iterating the policy operator to a certified `1e-13` error above it.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::linalg::{lu_solve, Mat};
use crate::mdp::finite::FiniteChainEnv;
use crate::mdp::PerturbedEnv;

/// Largest augmented chain the oracle accepts by default.
pub const DEFAULT_STATE_CAP: usize = 100_000;

/// Chains up to this size are solved by dense LU.
pub const DENSE_SOLVE_LIMIT: usize = 2_000;

/// Span tolerance of value iteration.
pub const VI_SPAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteAugmentedChain {
    n_states: usize,
    n_windows: usize,
    n_actions: usize,
    window: usize,
    gamma: f64,
    /// Row of `(next index, probability)` per `index * n_actions + action`.
    rows: Vec<Vec<(usize, f64)>>,
    /// Expected one-step reward per `index * n_actions + action`.
    rewards: Vec<f64>,
}

impl FiniteAugmentedChain {
    /// The exact chain of `env`.
    pub fn build(env: &FiniteChainEnv) -> Result<Self> {
        Self::build_with(env, None, DEFAULT_STATE_CAP)
    }

    /// The chain in which marks beyond position `horizon` have no influence.
    pub fn truncated(env: &FiniteChainEnv, horizon: usize) -> Result<Self> {
        Self::build_with(env, Some(horizon), DEFAULT_STATE_CAP)
    }

    pub fn build_with(env: &FiniteChainEnv, horizon: Option<usize>, cap: usize) -> Result<Self> {
        let n_windows = env.n_windows();
        let states = env.n_states().saturating_mul(n_windows);
        if states > cap {
            return Err(Error::StateSpaceTooLarge { states, cap });
        }
        let (n, k) = (env.n_states(), env.n_actions());
        let mut rows = Vec::with_capacity(states * k);
        let mut rewards = Vec::with_capacity(states * k);
        for s in 0..n {
            for w in 0..n_windows {
                let codes = env.decode_window(w);
                let law = env.mark_law(&codes, horizon);
                for a in 0..k {
                    let q = env.perturbed_row(s, a, &codes, horizon);
                    let mut row = Vec::new();
                    for (c, &lc) in law.iter().enumerate() {
                        if lc == 0.0 {
                            continue;
                        }
                        let w_next = env.shift_code(w, c as u8);
                        for (s_next, &qs) in q.iter().enumerate() {
                            if qs > 0.0 {
                                row.push((s_next * n_windows + w_next, lc * qs));
                            }
                        }
                    }
                    row.sort_by_key(|&(j, _)| j);
                    rows.push(row);
                    rewards.push(q.iter().zip(env.reward_row(s, a)).map(|(p, r)| p * r).sum());
                }
            }
        }
        Ok(Self {
            n_states: n,
            n_windows,
            n_actions: k,
            window: env.window(),
            gamma: env.gamma(),
            rows,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.n_states * self.n_windows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn index(&self, s: usize, window_code: usize) -> usize {
        s * self.n_windows + window_code
    }

    /// `(s, window_code)` of an augmented index.
    pub fn split(&self, index: usize) -> (usize, usize) {
        (index / self.n_windows, index % self.n_windows)
    }

    pub fn row(&self, index: usize, action: usize) -> &[(usize, f64)] {
        &self.rows[index * self.n_actions + action]
    }

    pub fn reward(&self, index: usize, action: usize) -> f64 {
        self.rewards[index * self.n_actions + action]
    }

    /// `max |r(s, a)|` over expected rewards.
    pub fn reward_sup(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_policy(&self, policy: &[usize]) -> Result<()> {
        if policy.len() != self.len() {
            return Err(Error::Dimension(format!(
                "policy has {} entries for {} states",
                policy.len(),
                self.len()
            )));
        }
        if let Some(a) = policy.iter().find(|&&a| a >= self.n_actions) {
            return Err(Error::ActionOutOfRange(a.to_string()));
        }
        Ok(())
    }

    /// `r(s, a) + gamma * sum_s' P(s' | s, a) v(s')`.
    pub fn q_value(&self, v: &[f64], index: usize, action: usize) -> f64 {
        let future: f64 = self.row(index, action).iter().map(|&(j, p)| p * v[j]).sum();
        self.reward(index, action) + self.gamma * future
    }

    /// Greedy action, ties to the lowest index.
    pub fn greedy_action(&self, v: &[f64], index: usize) -> (usize, f64) {
        let mut best = (0, self.q_value(v, index, 0));
        for a in 1..self.n_actions {
            let q = self.q_value(v, index, a);
            if q > best.1 {
                best = (a, q);
            }
        }
        best
    }

    /// Bellman optimality operator.
    pub fn bellman_optimality(&self, v: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.greedy_action(v, i).1).collect()
    }

    /// Policy operator `T^pi v`.
    pub fn bellman_policy(&self, v: &[f64], policy: &[usize]) -> Vec<f64> {
        (0..self.len()).map(|i| self.q_value(v, i, policy[i])).collect()
    }
}

/// Exact value of a stationary deterministic policy on the chain.
pub fn exact_policy_value(chain: &FiniteAugmentedChain, policy: &[usize]) -> Result<Vec<f64>> {
    chain.check_policy(policy)?;
    let n = chain.len();
    let r: Vec<f64> = (0..n).map(|i| chain.reward(i, policy[i])).collect();
    if n <= DENSE_SOLVE_LIMIT {
        let mut a = Mat::identity(n);
        for (i, &act) in policy.iter().enumerate() {
            for &(j, p) in chain.row(i, act) {
                a[(i, j)] -= chain.gamma * p;
            }
        }
        lu_solve(a, r)
    } else {
        // ||v_k - v|| <= gamma / (1 - gamma) ||v_k - v_{k-1}||
        let g = chain.gamma;
        let mut v = vec![0.0; n];
        loop {
            let next = chain.bellman_policy(&v, policy);
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if g / (1.0 - g) * diff <= 1e-13 {
                return Ok(v);
            }
        }
    }
}

/// Optimal values and a greedy optimal policy (ties to the lowest action).
///
/// Value iteration runs until the span of successive differences is below
/// [`VI_SPAN_TOL`]; the greedy policy is then polished by exact policy iteration so the
/// returned values solve the Bellman optimality equation to solver precision.
pub fn exact_optimal(chain: &FiniteAugmentedChain) -> Result<(Vec<f64>, Vec<usize>)> {
    let n = chain.len();
    let mut v = vec![0.0; n];
    loop {
        let next = chain.bellman_optimality(&v);
        let diffs: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
        let span = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - diffs.iter().cloned().fold(f64::INFINITY, f64::min);
        v = next;
        if span <= VI_SPAN_TOL {
            break;
        }
    }
    let mut policy: Vec<usize> = (0..n).map(|i| chain.greedy_action(&v, i).0).collect();
    for _ in 0..n.max(16) {
        let value = exact_policy_value(chain, &policy)?;
        // switch only on a strict improvement so ties do not cycle
        let mut changed = false;
        for (i, slot) in policy.iter_mut().enumerate() {
            let current = chain.q_value(&value, i, *slot);
            let (a, q) = chain.greedy_action(&value, i);
            if q > current + 1e-13 * (1.0 + current.abs()) && a != *slot {
                *slot = a;
                changed = true;
            }
        }
        if !changed {
            return Ok((value, policy));
        }
    }
    let value = exact_policy_value(chain, &policy)?;
    Ok((value, policy))
}

/// `|T V^pi - V^pi|` at every augmented state, with `T` the optimality operator.
pub fn bellman_error_map(chain: &FiniteAugmentedChain, policy: &[usize]) -> Result<Vec<f64>> {
    let v = exact_policy_value(chain, policy)?;
    let tv = chain.bellman_optimality(&v);
    Ok(tv.iter().zip(&v).map(|(a, b)| (a - b).abs()).collect())
}

/// `1/2 sum |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension("distributions of different support size".into()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Largest total variation between perturbed rows whose windows differ only in the mark at
/// `lag` (position `lag - 1`), over all states, actions and other marks.
pub fn single_event_perturbation(env: &FiniteChainEnv, lag: usize) -> Result<f64> {
    if lag == 0 {
        return Err(invalid("lag", "must be >= 1"));
    }
    if lag > env.window() {
        return Ok(0.0);
    }
    let pos = lag - 1;
    let mut worst = 0.0f64;
    for w in 0..env.n_windows() {
        let codes = env.decode_window(w);
        if codes[pos] != 0 {
            continue;
        }
        for alt in [1u8, 2] {
            let mut other = codes.clone();
            other[pos] = alt;
            for s in 0..env.n_states() {
                for a in 0..env.n_actions() {
                    let p = env.perturbed_row(s, a, &codes, None);
                    let q = env.perturbed_row(s, a, &other, None);
                    worst = worst.max(tv_distance(&p, &q)?);
                }
            }
        }
    }
    Ok(worst)
}

/// Same as [`single_event_perturbation`] for the law of the next mark.
pub fn single_event_mark_perturbation(env: &FiniteChainEnv, lag: usize) -> Result<f64> {
    if lag == 0 {
        return Err(invalid("lag", "must be >= 1"));
    }
    if lag > env.window() {
        return Ok(0.0);
    }
    let pos = lag - 1;
    let mut worst = 0.0f64;
    for w in 0..env.n_windows() {
        let codes = env.decode_window(w);
        for alt in 0..3u8 {
            if alt == codes[pos] || (alt != 0 && codes[pos] != 0) {
                continue;
            }
            let mut other = codes.clone();
            other[pos] = alt;
            let p = env.mark_law(&codes, None);
            let q = env.mark_law(&other, None);
            worst = worst.max(tv_distance(&p, &q)?);
        }
    }
    Ok(worst)
}

/// Window code of the first `horizon + 1` marks.
pub fn truncated_code(chain: &FiniteAugmentedChain, window_code: usize, horizon: usize) -> usize {
    let keep = (horizon + 1).min(chain.window);
    window_code % 3usize.pow(keep as u32)
}

/// Number of truncated augmented states `(s, x_0..x_T)`.
pub fn truncated_len(chain: &FiniteAugmentedChain, horizon: usize) -> usize {
    let keep = (horizon + 1).min(chain.window);
    chain.n_states * 3usize.pow(keep as u32)
}

/// Truncated index of a full augmented index.
pub fn truncate_index(chain: &FiniteAugmentedChain, index: usize, horizon: usize) -> usize {
    let (s, w) = chain.split(index);
    let keep = (horizon + 1).min(chain.window);
    s * 3usize.pow(keep as u32) + truncated_code(chain, w, horizon)
}

/// Full-chain policy of a table over truncated states.
pub fn lift_window_policy(chain: &FiniteAugmentedChain, horizon: usize, table: &[usize]) -> Result<Vec<usize>> {
    if table.len() != truncated_len(chain, horizon) {
        return Err(Error::Dimension(format!(
            "window policy has {} entries, expected {}",
            table.len(),
            truncated_len(chain, horizon)
        )));
    }
    Ok((0..chain.len()).map(|i| table[truncate_index(chain, i, horizon)]).collect())
}

/// `max |V^pi(s, x_0..) - V^pi(s, x_0..x_T, 0, ..)|` for a window policy on the exact chain.
pub fn exact_truncation_gap(env: &FiniteChainEnv, table: &[usize], horizon: usize) -> Result<f64> {
    let chain = FiniteAugmentedChain::build(env)?;
    let policy = lift_window_policy(&chain, horizon, table)?;
    let v = exact_policy_value(&chain, &policy)?;
    let keep = (horizon + 1).min(chain.window);
    let block = 3usize.pow(keep as u32);
    Ok((0..chain.len())
        .map(|i| {
            let (s, w) = chain.split(i);
            (v[i] - v[chain.index(s, w % block)]).abs()
        })
        .fold(0.0, f64::max))
}

/// Writes the chain in a line-oriented text format:
///
/// ```text
/// exomdp-chain 1
/// states <n_states> windows <n_windows> window <W> actions <k> gamma <gamma>
/// <index> <action> <reward> <nnz> <j> <p> <j> <p> ...
/// ```
///
/// Floats use the shortest representation that round-trips exactly.
pub fn write_chain<W: Write>(chain: &FiniteAugmentedChain, mut out: W) -> Result<()> {
    writeln!(out, "exomdp-chain 1")?;
    writeln!(
        out,
        "states {} windows {} window {} actions {} gamma {}",
        chain.n_states, chain.n_windows, chain.window, chain.n_actions, chain.gamma
    )?;
    for i in 0..chain.len() {
        for a in 0..chain.n_actions {
            let row = chain.row(i, a);
            let mut line = format!("{i} {a} {} {}", chain.reward(i, a), row.len());
            for &(j, p) in row {
                write!(line, " {j} {p}").expect("writing to a string");
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Parse(format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what}")))
}

pub fn read_chain<R: BufRead>(input: R) -> Result<FiniteAugmentedChain> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty input".into()))??;
    if header.trim() != "exomdp-chain 1" {
        return Err(Error::Parse(format!("unknown header `{header}`")));
    }
    let dims = lines.next().ok_or_else(|| Error::Parse("missing dimensions".into()))??;
    let mut t = dims.split_whitespace();
    let mut field = |key: &str| -> Result<String> {
        if t.next() != Some(key) {
            return Err(Error::Parse(format!("expected `{key}`")));
        }
        parse_field(t.next(), key)
    };
    let n_states: usize = field("states")?.parse().map_err(|_| Error::Parse("states".into()))?;
    let n_windows: usize = field("windows")?.parse().map_err(|_| Error::Parse("windows".into()))?;
    let window: usize = field("window")?.parse().map_err(|_| Error::Parse("window".into()))?;
    let n_actions: usize = field("actions")?.parse().map_err(|_| Error::Parse("actions".into()))?;
    let gamma: f64 = field("gamma")?.parse().map_err(|_| Error::Parse("gamma".into()))?;
    let total = n_states * n_windows * n_actions;
    let mut rows = vec![Vec::new(); total];
    let mut rewards = vec![f64::NAN; total];
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let i: usize = parse_field(t.next(), "index")?;
        let a: usize = parse_field(t.next(), "action")?;
        if i >= n_states * n_windows || a >= n_actions {
            return Err(Error::Parse(format!("entry ({i}, {a}) out of range")));
        }
        let slot = i * n_actions + a;
        rewards[slot] = parse_field(t.next(), "reward")?;
        let nnz: usize = parse_field(t.next(), "nnz")?;
        let mut row = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let j: usize = parse_field(t.next(), "column")?;
            let p: f64 = parse_field(t.next(), "probability")?;
            row.push((j, p));
        }
        rows[slot] = row;
    }
    if rewards.iter().any(|r| r.is_nan()) {
        return Err(Error::Parse("missing rows".into()));
    }
    Ok(FiniteAugmentedChain {
        n_states,
        n_windows,
        n_actions,
        window,
        gamma,
        rows,
        rewards,
    })
}

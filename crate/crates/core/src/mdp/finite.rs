//! Finite chain environment with quantized marks, small enough for exact enumeration.
//!
//! Marks take values in {-1, 0, +1}. A mark at window position `j` sits at lag `j + 1`
//! relative to the next transition. The perturbed kernel is the convex mixture
//!
//! `Q_H = (1 - w+ - w-) Q + w+ Q+ + w- Q-`, with `w± = sum_{j : x_j = ±1} M_{j+1}`,
//!
//! so flipping a single mark at lag `t` moves every row by at most `M_t` in total
//! variation, with equality on the row pair `(0, 0)` whose base and `Q+` supports are
//! disjoint. The event law is a quantized Hawkes process: an event occurs with probability
//! `alpha_0 + sum_j alpha_{j+1} |x_j|` and is positive with probability
//! `1/2 + 1/2 sum_j beta_{j+1} x_j`; flipping one mark at lag `t` moves it by at most
//! `alpha_t + beta_t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PerturbedEnv;
use crate::bounds::DecaySpec;
use crate::error::{invalid, Error, Result};
use crate::kernel::DecayKernel;

/// Mark codes: 0 is a non-event, 1 is +1 and 2 is -1.
pub const MARK_VALUES: [f64; 3] = [0.0, 1.0, -1.0];

pub fn mark_code(x: f64) -> u8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        2
    } else {
        0
    }
}

/// Random instance description, the form used in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiniteChainSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// Marks kept in the augmented state; lags beyond it have no influence.
    pub window: usize,
    pub gamma: f64,
    /// Per-lag transition influence `M_t`.
    pub m_kernel: DecayKernel,
    pub base_intensity: f64,
    pub excitation: DecayKernel,
    pub coupling: DecayKernel,
    pub seed: u64,
}

impl Default for FiniteChainSpec {
    fn default() -> Self {
        Self {
            n_states: 3,
            n_actions: 2,
            window: 3,
            gamma: 0.8,
            m_kernel: DecayKernel::exponential(0.3, 1.0),
            base_intensity: 0.3,
            excitation: DecayKernel::exponential(0.2, 1.0),
            coupling: DecayKernel::exponential(0.3, 1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteChainEnv {
    n_states: usize,
    n_actions: usize,
    window: usize,
    gamma: f64,
    base: Vec<f64>,
    plus: Vec<f64>,
    minus: Vec<f64>,
    reward: Vec<f64>,
    m_weights: Vec<f64>,
    alpha0: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    stationary: Vec<f64>,
}

/// Explicit tensors for [`FiniteChainEnv::from_parts`]; all `[s][a][s']` row-major.
#[derive(Debug, Clone)]
pub struct FiniteChainParts {
    pub n_states: usize,
    pub n_actions: usize,
    pub window: usize,
    pub gamma: f64,
    pub base: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub reward: Vec<f64>,
    /// `M_1..M_window`
    pub m_weights: Vec<f64>,
    pub alpha0: f64,
    /// `alpha_1..alpha_window`
    pub alpha: Vec<f64>,
    /// `beta_1..beta_window`
    pub beta: Vec<f64>,
}

fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    // Exp(1) weights give a uniform point on the simplex
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn point_mass(n: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[at] = 1.0;
    v
}

impl FiniteChainEnv {
    /// Random tensors from `spec.seed`. Row `(0, 0)` gets disjoint base and `Q+` supports so
    /// the configured `M_t` are attained exactly.
    pub fn from_spec(spec: &FiniteChainSpec) -> Result<Self> {
        if spec.n_states < 2 {
            return Err(invalid("n_states", "need at least 2 states"));
        }
        if spec.n_actions == 0 {
            return Err(invalid("n_actions", "need at least one action"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (n, k) = (spec.n_states, spec.n_actions);
        let mut base = Vec::with_capacity(n * k * n);
        let mut plus = Vec::with_capacity(n * k * n);
        let mut minus = Vec::with_capacity(n * k * n);
        for s in 0..n {
            for a in 0..k {
                if s == 0 && a == 0 {
                    base.extend(point_mass(n, 0));
                    plus.extend(point_mass(n, 1));
                } else {
                    base.extend(random_simplex(n, &mut rng));
                    plus.extend(random_simplex(n, &mut rng));
                }
                minus.extend(random_simplex(n, &mut rng));
            }
        }
        let reward: Vec<f64> = (0..n * k * n).map(|_| rng.random::<f64>()).collect();
        for (name, kern) in [
            ("m_kernel", &spec.m_kernel),
            ("excitation", &spec.excitation),
            ("coupling", &spec.coupling),
        ] {
            kern.validate()?;
            if !kern.is_non_increasing() {
                return Err(invalid(name, "kernel must be non-increasing"));
            }
        }
        Self::from_parts(FiniteChainParts {
            n_states: n,
            n_actions: k,
            window: spec.window,
            gamma: spec.gamma,
            base,
            plus,
            minus,
            reward,
            m_weights: spec.m_kernel.values(spec.window),
            alpha0: spec.base_intensity,
            alpha: spec.excitation.values(spec.window),
            beta: spec.coupling.values(spec.window),
        })
    }

    pub fn from_parts(p: FiniteChainParts) -> Result<Self> {
        let (n, k, w) = (p.n_states, p.n_actions, p.window);
        if n == 0 || k == 0 {
            return Err(invalid("n_states", "empty state or action set"));
        }
        if !(p.gamma > 0.0 && p.gamma < 1.0) {
            return Err(invalid("gamma", "must lie strictly inside (0, 1)"));
        }
        for (name, t) in [("base", &p.base), ("plus", &p.plus), ("minus", &p.minus)] {
            if t.len() != n * k * n {
                return Err(Error::Dimension(format!("{name} tensor has {} entries", t.len())));
            }
            for row in t.chunks(n) {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-12 {
                    return Err(invalid("transition", format!("{name} row is not a distribution")));
                }
            }
        }
        if p.reward.len() != n * k * n {
            return Err(Error::Dimension("reward tensor".into()));
        }
        if p.reward.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("reward", "rewards must lie in [0, 1]"));
        }
        for (name, v) in [("m_weights", &p.m_weights), ("alpha", &p.alpha), ("beta", &p.beta)] {
            if v.len() != w {
                return Err(Error::Dimension(format!("{name} must have one entry per lag")));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(invalid(name, "entries must be finite and >= 0"));
            }
        }
        if p.m_weights.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(invalid("m_weights", "sum must be <= 1 to keep rows stochastic"));
        }
        if !(0.0..=1.0).contains(&p.alpha0) || p.alpha0 + p.alpha.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(invalid("alpha", "base intensity plus excitation must stay <= 1"));
        }
        if p.beta.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(invalid("beta", "coupling sum must be <= 1"));
        }
        let mut env = Self {
            n_states: n,
            n_actions: k,
            window: w,
            gamma: p.gamma,
            base: p.base,
            plus: p.plus,
            minus: p.minus,
            reward: p.reward,
            m_weights: p.m_weights,
            alpha0: p.alpha0,
            alpha: p.alpha,
            beta: p.beta,
            stationary: Vec::new(),
        };
        env.stationary = env.compute_stationary_windows();
        Ok(env)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn m_weights(&self) -> &[f64] {
        &self.m_weights
    }

    /// Exact per-lag influences: `M_t` for the kernel and `alpha_t + beta_t` for marks.
    pub fn decay_spec(&self) -> DecaySpec {
        DecaySpec {
            m_kernel: DecayKernel::tabulated(self.m_weights.clone()),
            n_kernel: DecayKernel::tabulated(
                self.alpha.iter().zip(&self.beta).map(|(a, b)| a + b).collect(),
            ),
        }
    }

    /// Same instance with every transition disturbance removed.
    pub fn without_disturbance(&self) -> Self {
        let mut e = self.clone();
        e.m_weights.iter_mut().for_each(|m| *m = 0.0);
        e
    }

    pub fn n_windows(&self) -> usize {
        3usize.pow(self.window as u32)
    }

    pub fn base_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.base[i..i + self.n_states]
    }

    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.reward[i..i + self.n_states]
    }

    pub fn reward_at(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward_row(s, a)[next]
    }

    /// Codes of a window index; position 0 is the most recent mark.
    pub fn decode_window(&self, mut index: usize) -> Vec<u8> {
        (0..self.window)
            .map(|_| {
                let c = (index % 3) as u8;
                index /= 3;
                c
            })
            .collect()
    }

    pub fn encode_window(codes: &[u8]) -> usize {
        codes.iter().rev().fold(0, |acc, &c| acc * 3 + c as usize)
    }

    /// Window index after a new mark is pushed to the front.
    pub fn shift_code(&self, index: usize, code: u8) -> usize {
        if self.window == 0 {
            return 0;
        }
        let dropped = index % self.n_windows() / 3usize.pow(self.window as u32 - 1);
        let kept = index - dropped * 3usize.pow(self.window as u32 - 1);
        kept * 3 + code as usize
    }

    pub fn codes_of(&self, window: &[f64]) -> Vec<u8> {
        let mut c: Vec<u8> = window.iter().take(self.window).map(|&x| mark_code(x)).collect();
        c.resize(self.window, 0);
        c
    }

    fn active(horizon: Option<usize>, j: usize) -> bool {
        horizon.is_none_or(|t| j <= t)
    }

    /// Perturbed transition row. With `horizon = Some(T)` marks at positions beyond `T` are
    /// treated as non-events.
    pub fn perturbed_row(&self, s: usize, a: usize, codes: &[u8], horizon: Option<usize>) -> Vec<f64> {
        let (mut wp, mut wm) = (0.0, 0.0);
        for (j, &c) in codes.iter().enumerate() {
            if !Self::active(horizon, j) {
                continue;
            }
            match c {
                1 => wp += self.m_weights[j],
                2 => wm += self.m_weights[j],
                _ => {}
            }
        }
        let i = (s * self.n_actions + a) * self.n_states;
        (0..self.n_states)
            .map(|k| (1.0 - wp - wm) * self.base[i + k] + wp * self.plus[i + k] + wm * self.minus[i + k])
            .collect()
    }

    /// Law of the next mark over codes (0, +1, -1).
    pub fn mark_law(&self, codes: &[u8], horizon: Option<usize>) -> [f64; 3] {
        let mut p = self.alpha0;
        let mut drift = 0.0;
        for (j, &c) in codes.iter().enumerate() {
            if !Self::active(horizon, j) || c == 0 {
                continue;
            }
            p += self.alpha[j];
            drift += self.beta[j] * MARK_VALUES[c as usize];
        }
        let p = p.clamp(0.0, 1.0);
        let q = (0.5 + 0.5 * drift).clamp(0.0, 1.0);
        [1.0 - p, p * q, p * (1.0 - q)]
    }

    fn compute_stationary_windows(&self) -> Vec<f64> {
        let nw = self.n_windows();
        let laws: Vec<[f64; 3]> = (0..nw).map(|w| self.mark_law(&self.decode_window(w), None)).collect();
        let mut pi = vec![0.0; nw];
        pi[0] = 1.0;
        for _ in 0..100_000 {
            let mut next = vec![0.0; nw];
            for (w, &mass) in pi.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (c, &l) in laws[w].iter().enumerate() {
                    next[self.shift_code(w, c as u8)] += mass * l;
                }
            }
            let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if change < 1e-15 {
                break;
            }
        }
        pi
    }

    /// Stationary law of the event window, indexed by window code.
    pub fn stationary_windows(&self) -> &[f64] {
        &self.stationary
    }

    /// Stationary law of the marks older than position `horizon`, as
    /// `(codes for positions horizon+1.., probability)` with zero-probability blocks dropped.
    pub fn completion_law(&self, horizon: usize) -> Vec<(Vec<u8>, f64)> {
        let keep = (horizon + 1).min(self.window);
        let older = self.window - keep;
        let mut mass = vec![0.0; 3usize.pow(older as u32)];
        let recent_count = 3usize.pow(keep as u32);
        for (w, &p) in self.stationary.iter().enumerate() {
            mass[w / recent_count] += p;
        }
        mass.iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| {
                let mut idx = i;
                let codes = (0..older)
                    .map(|_| {
                        let c = (idx % 3) as u8;
                        idx /= 3;
                        c
                    })
                    .collect();
                (codes, p)
            })
            .collect()
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass: take the last supported outcome
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl PerturbedEnv for FiniteChainEnv {
    type State = usize;
    type Action = usize;

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn context_len(&self) -> usize {
        self.window
    }

    fn validate_action(&self, action: usize) -> Result<()> {
        if action < self.n_actions {
            Ok(())
        } else {
            Err(Error::ActionOutOfRange(format!("{action} (have {})", self.n_actions)))
        }
    }

    fn action_grid(&self) -> Vec<usize> {
        (0..self.n_actions).collect()
    }

    fn sample_mark<R: Rng + ?Sized>(&self, window: &[f64], rng: &mut R) -> f64 {
        let law = self.mark_law(&self.codes_of(window), None);
        MARK_VALUES[sample_index(&law, rng)]
    }

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        state: &usize,
        window: &[f64],
        action: usize,
        rng: &mut R,
    ) -> (usize, f64) {
        let row = self.perturbed_row(*state, action, &self.codes_of(window), None);
        let next = sample_index(&row, rng);
        (next, self.reward_at(*state, action, next))
    }

    fn sample_completion<R: Rng + ?Sized>(&self, recent: &[f64], rng: &mut R) -> Vec<f64> {
        let keep = recent.len().min(self.window);
        let law = self.completion_law(keep.saturating_sub(1));
        let probs: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
        let mut out: Vec<f64> = recent.iter().take(keep).copied().collect();
        if keep < self.window {
            let (codes, _) = &law[sample_index(&probs, rng)];
            out.extend(codes.iter().map(|&c| MARK_VALUES[c as usize]));
        }
        out
    }
}

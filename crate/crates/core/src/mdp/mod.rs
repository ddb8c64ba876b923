//! Perturbed MDPs: the augmented state, truncation of the event context, and the two
//! shipped environments.
//!
//! Both environments satisfy the existence hypotheses on rewards and kernels by
//! construction (finite spaces, or a compact state space with smooth dynamics and a
//! finite action grid), so those are documented here rather than checked.

pub mod finite;
pub mod pendulum;

use rand::Rng;

use crate::error::Result;
use crate::event_process::EventHistory;

pub use finite::{FiniteChainEnv, FiniteChainSpec};
pub use pendulum::{EnergyShapingPolicy, PendulumEnv, PendulumSpec, PendulumState};

/// Environment state paired with recent event marks, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState<S> {
    pub state: S,
    pub event_window: Vec<f64>,
}

impl<S> AugmentedState<S> {
    pub fn new(state: S, event_window: Vec<f64>) -> Self {
        Self {
            state,
            event_window,
        }
    }

    /// Keeps the most recent `horizon + 1` marks, zero-padding shorter windows.
    pub fn truncated(&self, horizon: usize) -> AugmentedState<S>
    where
        S: Clone,
    {
        AugmentedState {
            state: self.state.clone(),
            event_window: truncate_window(&self.event_window, horizon),
        }
    }
}

/// Window of the `horizon + 1` most recent marks of `recent_first`, zero-padded.
pub fn truncate_window(recent_first: &[f64], horizon: usize) -> Vec<f64> {
    let mut w: Vec<f64> = recent_first.iter().take(horizon + 1).copied().collect();
    w.resize(horizon + 1, 0.0);
    w
}

/// Pairs `state` with the `horizon + 1` most recent marks of a full history.
pub fn truncate<S>(full_history: &EventHistory, state: S, horizon: usize) -> AugmentedState<S> {
    let recent: Vec<f64> = full_history.recent().take(horizon + 1).map(|(_, x)| x).collect();
    AugmentedState {
        state,
        event_window: truncate_window(&recent, horizon),
    }
}

/// An MDP whose kernel is perturbed by an exogenous marked event process.
///
/// The augmented state carries `context_len()` marks, enough to reproduce both the
/// perturbed kernel and the event law exactly. The next mark is drawn from the event
/// process before the state transition, and never sees the state or action.
pub trait PerturbedEnv: Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;
    type Action: Copy + Send + Sync + std::fmt::Debug + PartialEq;

    fn gamma(&self) -> f64;

    /// Marks carried in a full augmented state.
    fn context_len(&self) -> usize;

    fn validate_action(&self, action: Self::Action) -> Result<()>;

    /// Default grid used by greedy improvement.
    fn action_grid(&self) -> Vec<Self::Action>;

    /// Next mark given the event context (most recent first).
    fn sample_mark<R: Rng + ?Sized>(&self, window: &[f64], rng: &mut R) -> f64;

    /// Next state from the perturbed kernel and the reward in `[0, 1]`.
    fn sample_transition<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        window: &[f64],
        action: Self::Action,
        rng: &mut R,
    ) -> (Self::State, f64);

    /// A full context whose leading marks equal `recent`, older marks drawn from the event
    /// process itself.
    fn sample_completion<R: Rng + ?Sized>(&self, recent: &[f64], rng: &mut R) -> Vec<f64>;

    fn step<R: Rng + ?Sized>(
        &self,
        aug: &AugmentedState<Self::State>,
        action: Self::Action,
        rng: &mut R,
    ) -> Result<(AugmentedState<Self::State>, f64)> {
        self.validate_action(action)?;
        let mark = self.sample_mark(&aug.event_window, rng);
        let (next, reward) = self.sample_transition(&aug.state, &aug.event_window, action, rng);
        Ok((
            AugmentedState {
                state: next,
                event_window: shift_window(&aug.event_window, mark),
            },
            reward,
        ))
    }
}

/// Pushes `mark` to the front of the window, dropping the oldest entry.
pub fn shift_window(window: &[f64], mark: f64) -> Vec<f64> {
    if window.is_empty() {
        return Vec::new();
    }
    let mut w = Vec::with_capacity(window.len());
    w.push(mark);
    w.extend_from_slice(&window[..window.len() - 1]);
    w
}

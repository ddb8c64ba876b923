//! Swing-up pendulum with the classic discrete-time physics, driven by exogenous torque
//! kicks from a marked Hawkes process.
//!
//! Conventions follow the classic environment: `theta = 0` is upright, explicit Euler with
//! `dt = 0.05`, angular velocity clipped to `[-max_speed, max_speed]`, agent torque clipped to
//! `[-max_torque, max_torque]`. The injected disturbance is
//! `gain * sum_j injection_{j+1} * x_j` over the event context (position 0 is the mark of
//! the current step), clipped to `[-disturbance_cap, disturbance_cap]`, and added to the
//! agent torque. With probability `reset_prob` per step (zero by default) the physical state
//! is redrawn from the start distribution; either way the process stays a single Markov
//! chain, so long sample paths need no episode boundaries.
//!
//! Reward: `1 - cost / cost_max` with the classic quadratic cost
//! `theta^2 + 0.1 theta_dot^2 + 0.001 u^2` and `cost_max` its value at the state/torque
//! extremes, so rewards lie in `[0, 1]`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PerturbedEnv;
use crate::error::{invalid, Error, Result};
use crate::event_process::{HawkesParams, HawkesSpec};
use crate::kernel::DecayKernel;

/// Angle wrapped to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumSpec {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub gamma: f64,
    /// Multiplier on the window-weighted event effect.
    pub event_gain: f64,
    /// Per-lag weight of a mark in the injected torque; lag 1 is the current step's mark.
    pub injection: DecayKernel,
    pub disturbance_cap: f64,
    /// Marks carried in the full context (event process and injection are cut beyond it).
    pub context_len: usize,
    pub reset_prob: f64,
    /// Torque grid size used by greedy improvement.
    pub action_grid_points: usize,
    pub events: HawkesSpec,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 10.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            gamma: 0.9,
            event_gain: 3.0,
            injection: DecayKernel::exponential(1.0, 0.7),
            disturbance_cap: 4.0,
            context_len: 24,
            reset_prob: 0.0,
            action_grid_points: 17,
            events: HawkesSpec {
                base_intensity: 0.1,
                excitation: DecayKernel::exponential(0.3, 1.0),
                mark_coupling: DecayKernel::polynomial(1.0, 2.0),
                mark_std: 1.0,
                horizon_cap: 24,
            },
        }
    }
}

impl PendulumSpec {
    pub fn build(&self) -> Result<PendulumEnv> {
        PendulumEnv::new(self.clone())
    }
}

#[derive(Debug, Clone)]
pub struct PendulumEnv {
    spec: PendulumSpec,
    events: HawkesParams,
    injection: Vec<f64>,
    cost_max: f64,
}

impl PendulumEnv {
    pub fn new(mut spec: PendulumSpec) -> Result<Self> {
        for (name, v) in [
            ("mass", spec.mass),
            ("length", spec.length),
            ("gravity", spec.gravity),
            ("dt", spec.dt),
            ("max_speed", spec.max_speed),
            ("max_torque", spec.max_torque),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be finite and > 0"));
            }
        }
        if !(spec.gamma > 0.0 && spec.gamma < 1.0) {
            return Err(invalid("gamma", "must lie strictly inside (0, 1)"));
        }
        if !(spec.event_gain.is_finite() && spec.event_gain >= 0.0) {
            return Err(invalid("event_gain", "must be finite and >= 0"));
        }
        if !(spec.disturbance_cap.is_finite() && spec.disturbance_cap >= 0.0) {
            return Err(invalid("disturbance_cap", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&spec.reset_prob) {
            return Err(invalid("reset_prob", "must lie in [0, 1)"));
        }
        if spec.context_len == 0 {
            return Err(invalid("context_len", "need at least one mark of context"));
        }
        if spec.action_grid_points < 2 {
            return Err(invalid("action_grid_points", "need at least 2 grid points"));
        }
        spec.injection.validate()?;
        spec.events.horizon_cap = spec.context_len;
        let events = spec.events.build()?;
        let injection = spec.injection.values(spec.context_len);
        let cost_max = PI * PI + 0.1 * spec.max_speed.powi(2) + 0.001 * spec.max_torque.powi(2);
        Ok(Self {
            spec,
            events,
            injection,
            cost_max,
        })
    }

    pub fn spec(&self) -> &PendulumSpec {
        &self.spec
    }

    pub fn events(&self) -> &HawkesParams {
        &self.events
    }

    /// Disturbance torque produced by an event context, most recent first.
    pub fn disturbance(&self, window: &[f64]) -> f64 {
        let raw: f64 = window.iter().zip(&self.injection).map(|(x, w)| x * w).sum();
        (self.spec.event_gain * raw).clamp(-self.spec.disturbance_cap, self.spec.disturbance_cap)
    }

    pub fn reward(&self, s: &PendulumState, torque: f64) -> f64 {
        let u = torque.clamp(-self.spec.max_torque, self.spec.max_torque);
        let th = wrap_angle(s.theta);
        let cost = th * th + 0.1 * s.theta_dot * s.theta_dot + 0.001 * u * u;
        (1.0 - cost / self.cost_max).clamp(0.0, 1.0)
    }

    /// Deterministic physics step with agent torque `action` and the window's disturbance.
    pub fn dynamics(&self, s: &PendulumState, window: &[f64], action: f64) -> PendulumState {
        let p = &self.spec;
        let u = action.clamp(-p.max_torque, p.max_torque) + self.disturbance(window);
        let acc = 3.0 * p.gravity / (2.0 * p.length) * s.theta.sin() + 3.0 / (p.mass * p.length * p.length) * u;
        let theta_dot = (s.theta_dot + acc * p.dt).clamp(-p.max_speed, p.max_speed);
        PendulumState {
            theta: wrap_angle(s.theta + theta_dot * p.dt),
            theta_dot,
        }
    }

    /// The classic start distribution: angle uniform on the circle, speed uniform on [-1, 1].
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> PendulumState {
        PendulumState {
            theta: wrap_angle(rng.random_range(-PI..PI)),
            theta_dot: rng.random_range(-1.0..1.0),
        }
    }

    /// A context drawn from the event process after `warmup` steps from an empty history.
    pub fn sample_context<R: Rng + ?Sized>(&self, warmup: usize, rng: &mut R) -> Vec<f64> {
        self.events.sample_marks(warmup, self.spec.context_len, rng)
    }
}

impl PerturbedEnv for PendulumEnv {
    type State = PendulumState;
    type Action = f64;

    fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    fn context_len(&self) -> usize {
        self.spec.context_len
    }

    fn validate_action(&self, action: f64) -> Result<()> {
        if action.is_finite() && action.abs() <= self.spec.max_torque {
            Ok(())
        } else {
            Err(Error::ActionOutOfRange(format!(
                "torque {action} outside [-{0}, {0}]",
                self.spec.max_torque
            )))
        }
    }

    fn action_grid(&self) -> Vec<f64> {
        let n = self.spec.action_grid_points;
        let m = self.spec.max_torque;
        (0..n).map(|i| -m + 2.0 * m * i as f64 / (n - 1) as f64).collect()
    }

    fn sample_mark<R: Rng + ?Sized>(&self, window: &[f64], rng: &mut R) -> f64 {
        self.events.sample_from_marks(window, rng)
    }

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        state: &PendulumState,
        window: &[f64],
        action: f64,
        rng: &mut R,
    ) -> (PendulumState, f64) {
        let reward = self.reward(state, action);
        let next = if self.spec.reset_prob > 0.0 && rng.random::<f64>() < self.spec.reset_prob {
            self.sample_start(rng)
        } else {
            self.dynamics(state, window, action)
        };
        (next, reward)
    }

    fn sample_completion<R: Rng + ?Sized>(&self, recent: &[f64], rng: &mut R) -> Vec<f64> {
        let keep = recent.len().min(self.spec.context_len);
        // run the process forward from a stationary-ish draw, then overwrite the recent block;
        // the older block is a draw from the process, independent of the recent marks
        let mut ctx = self.sample_context(4 * self.spec.context_len, rng);
        ctx[..keep].copy_from_slice(&recent[..keep]);
        ctx
    }
}

/// Fixed swing-up controller: energy pumping far from upright, linear balancing near it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyShapingPolicy {
    pub energy_gain: f64,
    pub balance_angle: f64,
    pub kp: f64,
    pub kd: f64,
    pub max_torque: f64,
}

impl Default for EnergyShapingPolicy {
    fn default() -> Self {
        Self {
            energy_gain: 1.0,
            balance_angle: 0.5,
            kp: 10.0,
            kd: 2.0,
            max_torque: 2.0,
        }
    }
}

impl EnergyShapingPolicy {
    /// Torque for a physical state of a pendulum with the given gravity and length.
    pub fn torque(&self, s: &PendulumState, gravity: f64, length: f64) -> f64 {
        let th = wrap_angle(s.theta);
        let u = if th.abs() < self.balance_angle {
            -self.kp * th - self.kd * s.theta_dot
        } else {
            // energy per unit inertia relative to the upright rest state (which has zero)
            let energy = 0.5 * length * length / 3.0 * s.theta_dot * s.theta_dot
                - 0.5 * gravity * length * (1.0 - th.cos());
            // torque along the velocity changes the energy at rate u * theta_dot
            let dir = if s.theta_dot == 0.0 { 1.0 } else { s.theta_dot.signum() };
            -self.energy_gain * energy * dir * self.max_torque
        };
        u.clamp(-self.max_torque, self.max_torque)
    }

    pub fn act(&self, env: &PendulumEnv, s: &PendulumState) -> f64 {
        self.torque(s, env.spec().gravity, env.spec().length)
            .clamp(-env.spec().max_torque, env.spec().max_torque)
    }
}

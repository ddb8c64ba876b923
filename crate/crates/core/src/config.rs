//! TOML schemas for each command-line workflow. Every field has a default, so a config file
//! only needs the keys it changes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bounds::{DecaySpec, LstdBoundInputs, MixingParams};
use crate::error::{Error, Result};
use crate::event_process::HawkesSpec;
use crate::kernel::DecayKernel;
use crate::mdp::finite::FiniteChainSpec;
use crate::policy_iter::McConfig;

/// Parses TOML into `T`.
pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Reads a TOML file, or returns defaults when `path` is `None`.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => from_toml(&std::fs::read_to_string(p)?),
        None => Ok(T::default()),
    }
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

/// Event-process simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HawkesRunConfig {
    pub length: usize,
    pub seed: u64,
    /// Lags at which the influence bound `N_T` is reported.
    pub report_lags: Vec<usize>,
    pub hawkes: HawkesSpec,
}

impl Default for HawkesRunConfig {
    fn default() -> Self {
        Self {
            length: 1_000,
            seed: 0,
            report_lags: (1..=5).collect(),
            hawkes: HawkesSpec {
                base_intensity: 0.2,
                excitation: DecayKernel::exponential(0.5, 1.0),
                mark_coupling: DecayKernel::exponential(0.5, 1.0),
                mark_std: 1.0,
                horizon_cap: crate::event_process::DEFAULT_HORIZON_CAP,
            },
        }
    }
}

/// Bound table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub horizons: Vec<usize>,
    pub decay: DecaySpec,
    pub mixing: MixingParams,
    pub lstd: LstdBoundInputs,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon: 0.1,
            horizons: (0..=6).collect(),
            decay: DecaySpec {
                m_kernel: DecayKernel::exponential(0.5, 1.0),
                n_kernel: DecayKernel::exponential(0.5, 1.0),
            },
            mixing: MixingParams::default(),
            lstd: LstdBoundInputs {
                n: 10_000,
                d: 21,
                feature_bound: 64.0,
                gamma: 0.9,
                delta: 0.05,
                nu: 1e-3,
                omega: 1e-3,
                alpha_star_norm: 1.0,
                inherent_error: 0.0,
            },
        }
    }
}

/// Policy iteration on a random finite chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyIterConfig {
    pub horizon: usize,
    pub k_max: usize,
    /// Monte Carlo evaluation and improvement instead of exact enumeration.
    pub monte_carlo: bool,
    pub mc: McConfig,
    pub chain: FiniteChainSpec,
}

impl Default for PolicyIterConfig {
    fn default() -> Self {
        Self {
            horizon: 1,
            k_max: 20,
            monte_carlo: false,
            mc: McConfig {
                rollout_horizon: 40,
                ..McConfig::default()
            },
            chain: FiniteChainSpec::default(),
        }
    }
}

/// Single LSTD evaluation of the pendulum policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub samples: usize,
    pub horizon: usize,
    pub decay: f64,
    pub experiment: crate::experiment::ExperimentConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            horizon: 5,
            decay: 1.0,
            experiment: crate::experiment::ExperimentConfig::default(),
        }
    }
}

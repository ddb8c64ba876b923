//! Python bindings: Hawkes simulation, truncation bounds, finite-chain policy iteration,
//! LSTD on user-supplied features and the pendulum sweep.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use exomdp::bounds::{self, DecaySpec, MixingParams};
use exomdp::event_process::{self, EventHistory};
use exomdp::experiment::{self, ExperimentConfig};
use exomdp::kernel::DecayKernel;
use exomdp::linalg::Mat;
use exomdp::lstd::{fixed_point_residual, gram_min_eigenvalue, lstd_solve};
use exomdp::mdp::finite::{FiniteChainEnv, FiniteChainSpec};
use exomdp::oracle::{exact_optimal, FiniteAugmentedChain};
use exomdp::policy_iter::run_policy_iteration;

fn py_err(e: exomdp::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn decay_spec(m: (f64, f64), n: (f64, f64)) -> PyResult<DecaySpec> {
    let spec = DecaySpec {
        m_kernel: DecayKernel::exponential(m.0, m.1),
        n_kernel: DecayKernel::exponential(n.0, n.1),
    };
    spec.validate().map_err(py_err)?;
    Ok(spec)
}

/// Discrete marked Hawkes process with exponential excitation and mark coupling.
#[pyclass(name = "HawkesProcess", module = "exomdp_py", frozen)]
struct PyHawkes {
    inner: event_process::HawkesParams,
}

#[pymethods]
impl PyHawkes {
    #[new]
    #[pyo3(signature = (base_intensity, excitation=(0.3, 1.0), coupling=(0.3, 1.0)))]
    fn new(base_intensity: f64, excitation: (f64, f64), coupling: (f64, f64)) -> PyResult<Self> {
        let inner = event_process::HawkesParams::exponential(base_intensity, excitation, coupling).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn is_stable(&self) -> bool {
        self.inner.is_stable()
    }

    /// Event probability after `marks` (oldest first; zero marks are non-events).
    fn intensity(&self, marks: Vec<f64>) -> PyResult<f64> {
        let h = EventHistory::from_marks(&marks).map_err(py_err)?;
        Ok(event_process::intensity(&self.inner, &h))
    }

    /// Mean of the next mark given an event, after `marks` (oldest first).
    fn mark_mean(&self, marks: Vec<f64>) -> PyResult<f64> {
        let h = EventHistory::from_marks(&marks).map_err(py_err)?;
        Ok(event_process::mark_mean(&self.inner, &h))
    }

    /// Total-variation influence bound of an event `lag` steps old.
    fn mark_tv_bound(&self, lag: usize) -> PyResult<f64> {
        event_process::mark_tv_bound(&self.inner, lag).map_err(py_err)
    }

    /// `length` steps from an empty history as `(indicator, mark)` pairs.
    fn simulate(&self, length: usize, seed: u64) -> Vec<(bool, f64)> {
        event_process::rollout_events(&self.inner, length, seed)
            .steps()
            .iter()
            .map(|s| (s.indicator, s.mark))
            .collect()
    }
}

/// Cropping, suboptimality, improvement-slack and Bellman-threshold bounds at `horizon` for
/// exponential transition (`m`) and mark (`n`) kernels given as `(c, rate)`.
#[pyfunction]
#[pyo3(signature = (gamma, horizon, m=(0.3, 1.0), n=(0.3, 1.0)))]
fn truncation_bounds<'py>(py: Python<'py>, gamma: f64, horizon: usize, m: (f64, f64), n: (f64, f64)) -> PyResult<Bound<'py, PyDict>> {
    let spec = decay_spec(m, n)?;
    let (tail_m, tail_n) = spec.tails(horizon).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("tail_m", tail_m)?;
    d.set_item("tail_n", tail_n)?;
    d.set_item("state_cropping", bounds::state_cropping_bound(&spec, gamma, horizon).map_err(py_err)?)?;
    d.set_item("suboptimality", bounds::suboptimality_epsilon(&spec, gamma, horizon).map_err(py_err)?)?;
    d.set_item("improvement_slack", bounds::policy_improvement_slack(&spec, gamma, horizon).map_err(py_err)?)?;
    d.set_item("bellman_threshold", bounds::bellman_error_threshold(&spec, gamma, horizon).map_err(py_err)?)?;
    Ok(d)
}

/// Smallest horizon whose suboptimality bound is at most `epsilon`.
#[pyfunction]
#[pyo3(signature = (gamma, epsilon, m=(0.3, 1.0), n=(0.3, 1.0)))]
fn horizon_for_epsilon(gamma: f64, epsilon: f64, m: (f64, f64), n: (f64, f64)) -> PyResult<usize> {
    bounds::horizon_for_epsilon(&decay_spec(m, n)?, gamma, epsilon).map_err(py_err)
}

/// Burn-in length for `n` samples at failure probability `delta`.
#[pyfunction]
#[pyo3(signature = (n, delta, beta_bar=1.0, b=0.05, kappa=1.0))]
fn burn_in_length(n: usize, delta: f64, beta_bar: f64, b: f64, kappa: f64) -> PyResult<usize> {
    bounds::burn_in_length(n, delta, &MixingParams { beta_bar, b, kappa }).map_err(py_err)
}

fn to_mat(rows: &[Vec<f64>]) -> PyResult<Mat> {
    Mat::from_rows(rows).map_err(py_err)
}

/// Pathwise LSTD on feature rows `phi`, next-state rows `phi_next` and `rewards`.
#[pyfunction]
fn lstd<'py>(py: Python<'py>, phi: Vec<Vec<f64>>, phi_next: Vec<Vec<f64>>, rewards: Vec<f64>, gamma: f64) -> PyResult<Bound<'py, PyDict>> {
    let (phi, phi_next) = (to_mat(&phi)?, to_mat(&phi_next)?);
    let sol = lstd_solve(&phi, &phi_next, &rewards, gamma).map_err(py_err)?;
    let residual = fixed_point_residual(&sol.weights, &phi, &phi_next, &rewards, gamma).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("rank", sol.rank)?;
    d.set_item("nu", gram_min_eigenvalue(&phi).map_err(py_err)?)?;
    d.set_item("residual", residual)?;
    d.set_item("weights", sol.weights)?;
    Ok(d)
}

/// Random finite chain with an event window, solvable exactly.
#[pyclass(name = "FiniteChain", module = "exomdp_py", frozen)]
struct PyFiniteChain {
    env: FiniteChainEnv,
}

#[pymethods]
impl PyFiniteChain {
    #[new]
    #[pyo3(signature = (n_states=3, n_actions=2, window=3, gamma=0.8, seed=0))]
    fn new(n_states: usize, n_actions: usize, window: usize, gamma: f64, seed: u64) -> PyResult<Self> {
        let spec = FiniteChainSpec {
            n_states,
            n_actions,
            window,
            gamma,
            seed,
            ..FiniteChainSpec::default()
        };
        Ok(Self {
            env: FiniteChainEnv::from_spec(&spec).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_augmented_states(&self) -> usize {
        self.env.n_states() * self.env.n_windows()
    }

    /// Optimal values on the full augmented chain.
    fn optimal_values(&self) -> PyResult<Vec<f64>> {
        let chain = FiniteAugmentedChain::build(&self.env).map_err(py_err)?;
        Ok(exact_optimal(&chain).map_err(py_err)?.0)
    }

    /// Exact window policy iteration at `horizon` for at most `k_max` improvements.
    #[pyo3(signature = (horizon, k_max=20))]
    fn policy_iteration<'py>(&self, py: Python<'py>, horizon: usize, k_max: usize) -> PyResult<Bound<'py, PyDict>> {
        let report = run_policy_iteration(&self.env, horizon, k_max, None).map_err(py_err)?;
        let iterations = PyList::empty(py);
        for it in &report.iterations {
            let row = PyDict::new(py);
            row.set_item("k", it.k)?;
            row.set_item("mean_value", it.exact_values.iter().sum::<f64>() / it.exact_values.len() as f64)?;
            row.set_item("min_change", it.min_change)?;
            row.set_item("violations", it.guarantee_violations)?;
            iterations.append(row)?;
        }
        let d = PyDict::new(py);
        d.set_item("converged", report.converged)?;
        d.set_item("bellman_threshold", report.bellman_threshold)?;
        d.set_item("improvement_slack", report.improvement_slack)?;
        d.set_item("slack_respected", report.slack_respected())?;
        d.set_item("final_values", report.iterations.last().map(|it| it.exact_values.clone()))?;
        d.set_item("iterations", iterations)?;
        Ok(d)
    }
}

/// Runs the pendulum sweep from a TOML configuration (defaults when `None`) and returns the
/// per-point aggregates and trend checks.
#[pyfunction]
#[pyo3(signature = (config_toml=None, jobs=None))]
fn run_experiment<'py>(py: Python<'py>, config_toml: Option<&str>, jobs: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = match config_toml {
        Some(text) => ExperimentConfig::from_toml(text).map_err(py_err)?,
        None => ExperimentConfig::default(),
    };
    let sweep = py.detach(|| experiment::run_sweep(&cfg, jobs)).map_err(py_err)?;
    let aggregates = PyList::empty(py);
    for a in &sweep.aggregates {
        let row = PyDict::new(py);
        row.set_item("panel", a.point.panel.name())?;
        row.set_item("n", a.point.n)?;
        row.set_item("horizon", a.point.horizon)?;
        row.set_item("decay", a.point.decay)?;
        row.set_item("count", a.count)?;
        row.set_item("failures", a.failures)?;
        row.set_item("median_mse", a.median)?;
        aggregates.append(row)?;
    }
    let checks = PyList::empty(py);
    for c in experiment::trend_checks(&sweep.aggregates) {
        checks.append((c.name, c.passed, c.detail))?;
    }
    let d = PyDict::new(py);
    d.set_item("aggregates", aggregates)?;
    d.set_item("checks", checks)?;
    Ok(d)
}

#[pymodule]
fn exomdp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHawkes>()?;
    m.add_class::<PyFiniteChain>()?;
    m.add_function(wrap_pyfunction!(truncation_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(horizon_for_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(burn_in_length, m)?)?;
    m.add_function(wrap_pyfunction!(lstd, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

//! Closed-form evaluators for the truncation, policy-iteration and LSTD error bounds.
//!
//! Throughout, `tail(T) = sum_{t > T} (M_t + N_t)` with `M_t` the per-lag kernel influence
//! and `N_t` the per-lag influence on the event-mark law.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{DecayKernel, TailSum};

/// Default largest horizon scanned by [`horizon_for_epsilon`].
pub const DEFAULT_HORIZON_SCAN_CAP: usize = 100_000;

/// `ln+(x) = max(ln x, 0)`.
pub fn ln_plus(x: f64) -> f64 {
    x.ln().max(0.0)
}

/// Per-lag influence series on the transition kernel (`M_t`) and on the mark law (`N_t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySpec {
    pub m_kernel: DecayKernel,
    pub n_kernel: DecayKernel,
}

impl DecaySpec {
    pub fn zero() -> Self {
        Self {
            m_kernel: DecayKernel::zero(),
            n_kernel: DecayKernel::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in [&self.m_kernel, &self.n_kernel] {
            k.validate()?;
            if !k.is_summable() {
                return Err(Error::NonSummable(format!("{k:?}")));
            }
        }
        Ok(())
    }

    /// `(sum_{t > T} M_t, sum_{t > T} N_t)`.
    pub fn tails(&self, horizon: usize) -> Result<(f64, f64)> {
        Ok((
            self.m_kernel.tail_sum(horizon)?.exact,
            self.n_kernel.tail_sum(horizon)?.exact,
        ))
    }

    /// `sum_{t > T} (M_t + N_t)`.
    pub fn tail(&self, horizon: usize) -> Result<f64> {
        let (m, n) = self.tails(horizon)?;
        Ok(m + n)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            m_kernel: self.m_kernel.scaled(factor),
            n_kernel: self.n_kernel.scaled(factor),
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 || gamma == 0.0 {
        Ok(())
    } else {
        Err(invalid("gamma", format!("must lie in [0, 1), got {gamma}")))
    }
}

/// Tail of a single kernel; exponential kernels also report the integral bound.
pub fn tail_sum(kernel: &DecayKernel, horizon: usize) -> Result<TailSum> {
    kernel.tail_sum(horizon)
}

/// Smallest `T` with both tails below `epsilon (1 - gamma)^2 / 4`, scanning up to `cap`.
pub fn horizon_for_epsilon_capped(spec: &DecaySpec, gamma: f64, epsilon: f64, cap: usize) -> Result<usize> {
    check_gamma(gamma)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid("epsilon", "must be finite and > 0"));
    }
    spec.validate()?;
    let threshold = epsilon * (1.0 - gamma).powi(2) / 4.0;
    let ok = |t: usize| -> Result<bool> {
        let (m, n) = spec.tails(t)?;
        Ok(m < threshold && n < threshold)
    };
    if !ok(cap)? {
        return Err(Error::HorizonInfeasible { cap });
    }
    // tails are non-increasing in T, so the predicate is monotone: bisect
    let (mut lo, mut hi) = (0usize, cap);
    if ok(0)? {
        return Ok(0);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn horizon_for_epsilon(spec: &DecaySpec, gamma: f64, epsilon: f64) -> Result<usize> {
    horizon_for_epsilon_capped(spec, gamma, epsilon, DEFAULT_HORIZON_SCAN_CAP)
}

fn scaled_tail(spec: &DecaySpec, gamma: f64, horizon: usize, factor: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(factor * spec.tail(horizon)?)
}

/// Suboptimality of the best window policy: `2 / (1 - gamma)^2 * tail(T)`.
pub fn suboptimality_epsilon(spec: &DecaySpec, gamma: f64, horizon: usize) -> Result<f64> {
    scaled_tail(spec, gamma, horizon, 2.0 / (1.0 - gamma).powi(2))
}

/// Value gap from cropping the context: `tail(T) / (1 - gamma)^2`.
pub fn state_cropping_bound(spec: &DecaySpec, gamma: f64, horizon: usize) -> Result<f64> {
    scaled_tail(spec, gamma, horizon, 1.0 / (1.0 - gamma).powi(2))
}

/// Largest value decrease one improvement step can cause: `(2 + 5 gamma) / (1 - gamma)^2 * tail(T)`.
pub fn policy_improvement_slack(spec: &DecaySpec, gamma: f64, horizon: usize) -> Result<f64> {
    scaled_tail(spec, gamma, horizon, (2.0 + 5.0 * gamma) / (1.0 - gamma).powi(2))
}

/// Bellman error above which improvement is guaranteed: `11 / (1 - gamma)^3 * tail(T)`.
pub fn bellman_error_threshold(spec: &DecaySpec, gamma: f64, horizon: usize) -> Result<f64> {
    scaled_tail(spec, gamma, horizon, 11.0 / (1.0 - gamma).powi(3))
}

/// Exponential beta-mixing envelope `beta_i <= beta_bar * exp(-b i^kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingParams {
    pub beta_bar: f64,
    pub b: f64,
    pub kappa: f64,
}

impl Default for MixingParams {
    fn default() -> Self {
        Self {
            beta_bar: 1.0,
            b: 0.05,
            kappa: 1.0,
        }
    }
}

impl MixingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_bar.is_finite() && self.beta_bar >= 0.0) {
            return Err(invalid("beta_bar", "must be finite and >= 0"));
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(invalid("b", "must be finite and > 0"));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(invalid("kappa", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// `max(lambda / b, 1)^(1 / kappa)`
    fn blocking_factor(&self, lambda: f64) -> f64 {
        (lambda / self.b).max(1.0).powf(1.0 / self.kappa)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid("delta", format!("must lie in (0, 1), got {delta}")))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(invalid("N", "need at least one sample"))
    } else {
        Ok(())
    }
}

/// Samples to discard before the path is close to stationary:
/// `ceil((ln(2 e beta_bar N / delta) / b)^(1 / kappa))`, or 0 when `beta_bar = 0`.
pub fn burn_in_length(n: usize, delta: f64, mixing: &MixingParams) -> Result<usize> {
    check_delta(delta)?;
    mixing.validate()?;
    if mixing.beta_bar == 0.0 || n == 0 {
        return Ok(0);
    }
    let inner = (2.0 * std::f64::consts::E * mixing.beta_bar * n as f64 / delta).ln() / mixing.b;
    Ok(inner.max(0.0).powf(1.0 / mixing.kappa).ceil() as usize)
}

/// `Lambda_1(N, d, delta) = 2(d+1) ln N + ln(e/delta) + ln+(max(C (6e)^{2(d+1)}, beta_bar))`
/// with the leading constant `C` passed in, evaluated in log space.
fn lambda_with_constant(n: usize, d: usize, delta: f64, beta_bar: f64, constant: f64) -> f64 {
    let k = 2.0 * (d as f64 + 1.0);
    let log_cover = constant.ln() + k * (6.0 * std::f64::consts::E).ln();
    let log_max = if beta_bar > 0.0 { log_cover.max(beta_bar.ln()) } else { log_cover };
    k * (n as f64).ln() + (std::f64::consts::E / delta).ln() + log_max.max(0.0)
}

/// Capacity term of the value-error generalization bound (constant 16).
pub fn lambda1(n: usize, d: usize, delta: f64, beta_bar: f64) -> f64 {
    lambda_with_constant(n, d, delta, beta_bar, 16.0)
}

/// Capacity term of the Gram-eigenvalue concentration bound (constant 18).
pub fn lambda_gram(n: usize, d: usize, delta: f64, beta_bar: f64) -> f64 {
    lambda_with_constant(n, d, delta, beta_bar, 18.0)
}

/// `Lambda_2(N, delta) = ln(e/delta) + ln(max(6, N beta_bar))`.
pub fn lambda2(n: usize, delta: f64, beta_bar: f64) -> f64 {
    (std::f64::consts::E / delta).ln() + (6.0f64).max(n as f64 * beta_bar).ln()
}

/// `(epsilon_1, epsilon_2)` of the mixing-sample error terms.
#[allow(clippy::too_many_arguments)]
pub fn mixing_epsilons(
    n: usize,
    d: usize,
    delta: f64,
    mixing: &MixingParams,
    feature_bound: f64,
    gamma: f64,
    alpha_star_norm: f64,
) -> Result<(f64, f64)> {
    check_n(n)?;
    check_delta(delta)?;
    check_gamma(gamma)?;
    mixing.validate()?;
    if d == 0 {
        return Err(invalid("d", "need at least one feature"));
    }
    let nf = n as f64;
    let l1 = lambda1(n, d, delta, mixing.beta_bar);
    let l2 = lambda2(n, delta, mixing.beta_bar);
    let eps1 = 24.0 / (1.0 - gamma) * (2.0 * l1 / nf * mixing.blocking_factor(l1)).sqrt();
    let eps2 = 12.0
        * (1.0 / (1.0 - gamma) + feature_bound * alpha_star_norm)
        * (2.0 * l2 / nf * mixing.blocking_factor(l2)).sqrt();
    Ok((eps1, eps2))
}

/// High-probability lower bound on the smallest Gram eigenvalue and whether `N` is large
/// enough for it to be informative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramBound {
    pub value: f64,
    pub feasible: bool,
}

/// `(sqrt(omega)/2 - 6 L sqrt(2 Lambda / N * max(Lambda/b, 1)^(1/kappa)))^2`, clamped at 0
/// when the bracket is negative; feasible iff `N > 288 L^2 Lambda / omega * max(..)^(1/kappa)`.
pub fn gram_eigenvalue_lower_bound(
    omega: f64,
    n: usize,
    d: usize,
    delta: f64,
    mixing: &MixingParams,
    feature_bound: f64,
) -> Result<GramBound> {
    check_n(n)?;
    check_delta(delta)?;
    mixing.validate()?;
    if !(omega.is_finite() && omega > 0.0) {
        return Err(invalid("omega", "must be finite and > 0"));
    }
    let lam = lambda_gram(n, d, delta, mixing.beta_bar);
    let blk = mixing.blocking_factor(lam);
    let dev = 6.0 * feature_bound * (2.0 * lam / n as f64 * blk).sqrt();
    let bracket = omega.sqrt() / 2.0 - dev;
    let feasible = (n as f64) > 288.0 * feature_bound.powi(2) * lam / omega * blk;
    Ok(GramBound {
        value: if bracket > 0.0 { bracket * bracket } else { 0.0 },
        feasible,
    })
}

/// Inputs of the LSTD expected-error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstdBoundInputs {
    pub n: usize,
    pub d: usize,
    pub feature_bound: f64,
    pub gamma: f64,
    pub delta: f64,
    pub nu: f64,
    pub omega: f64,
    pub alpha_star_norm: f64,
    pub inherent_error: f64,
}

impl LstdBoundInputs {
    pub fn validate(&self) -> Result<()> {
        check_n(self.n)?;
        check_delta(self.delta)?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", "must lie strictly inside (0, 1)"));
        }
        if self.d == 0 {
            return Err(invalid("d", "need at least one feature"));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(invalid("nu", "must be finite and > 0"));
        }
        for (name, v) in [
            ("feature_bound", self.feature_bound),
            ("alpha_star_norm", self.alpha_star_norm),
            ("inherent_error", self.inherent_error),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// One named term of a bound and its value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundTerm {
    pub name: &'static str,
    pub value: f64,
}

/// Term-by-term breakdown of a bound; `total` is the sum of the terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundExplanation {
    pub bound: &'static str,
    pub terms: Vec<BoundTerm>,
    pub total: f64,
}

impl BoundExplanation {
    fn new(bound: &'static str, terms: Vec<BoundTerm>) -> Self {
        let total = terms.iter().map(|t| t.value).sum();
        Self { bound, terms, total }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// The LSTD bound split into its approximation, estimation and mixing terms.
pub fn explain_lstd_bound(
    inputs: &LstdBoundInputs,
    spec: &DecaySpec,
    horizon: usize,
    mixing: &MixingParams,
) -> Result<BoundExplanation> {
    inputs.validate()?;
    let g = inputs.gamma;
    let one_m_g2 = 1.0 - g * g;
    let tail = spec.tail(horizon)?;
    let approx = 4.0 * std::f64::consts::SQRT_2 / one_m_g2.sqrt() * (3.0 / one_m_g2 * tail + inputs.inherent_error);
    let nf = inputs.n as f64;
    let d = inputs.d as f64;
    let estimation = 2.0 * inputs.feature_bound / (1.0 - g).powi(2)
        * (d / inputs.nu).sqrt()
        * ((2.0 * (8.0 * d / inputs.delta).ln() / nf).sqrt() + 1.0 / nf);
    let (eps1, eps2) = mixing_epsilons(
        inputs.n,
        inputs.d,
        inputs.delta,
        mixing,
        inputs.feature_bound,
        g,
        inputs.alpha_star_norm,
    )?;
    Ok(BoundExplanation::new(
        "lstd_expected_error",
        vec![
            BoundTerm { name: "approximation", value: approx },
            BoundTerm { name: "estimation", value: estimation },
            BoundTerm { name: "epsilon1", value: eps1 },
            BoundTerm { name: "epsilon2", value: 2.0 * std::f64::consts::SQRT_2 * eps2 },
        ],
    ))
}

/// Expected-error bound on the clipped LSTD value function.
pub fn lstd_expected_error_bound(
    inputs: &LstdBoundInputs,
    spec: &DecaySpec,
    horizon: usize,
    mixing: &MixingParams,
) -> Result<f64> {
    Ok(explain_lstd_bound(inputs, spec, horizon, mixing)?.total)
}

/// Every truncation and policy-iteration bound at one horizon.
pub fn explain_truncation_bounds(spec: &DecaySpec, gamma: f64, horizon: usize) -> Result<BoundExplanation> {
    let (m, n) = spec.tails(horizon)?;
    let terms = vec![
        BoundTerm { name: "tail_m", value: m },
        BoundTerm { name: "tail_n", value: n },
        BoundTerm { name: "state_cropping", value: state_cropping_bound(spec, gamma, horizon)? },
        BoundTerm { name: "suboptimality", value: suboptimality_epsilon(spec, gamma, horizon)? },
        BoundTerm { name: "improvement_slack", value: policy_improvement_slack(spec, gamma, horizon)? },
        BoundTerm { name: "bellman_threshold", value: bellman_error_threshold(spec, gamma, horizon)? },
    ];
    // the terms are alternative bounds, not summands
    Ok(BoundExplanation {
        bound: "truncation",
        total: f64::NAN,
        terms,
    })
}

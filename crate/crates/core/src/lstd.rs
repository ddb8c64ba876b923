//! Pathwise LSTD on truncated augmented states.
//!
//! For a sample path `x_1..x_N` with rewards `r_1..r_N`, the design matrices are
//! `Phi[t] = phi(x_t)` and `Phi'[t] = phi(x_{t+1})` with a zero last row, so the pathwise
//! Bellman operator is `r + gamma P` with `(P v)_t = v_{t+1}` and `(P v)_N = 0`. The weights
//! solve `A w = b` with `A = Phi^T (Phi - gamma Phi')`, `b = Phi^T r` through the SVD
//! pseudoinverse; when `Phi` has full column rank this is the fixed point of the projected
//! pathwise operator.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::linalg::{dot, pinv_solve, symmetric_eigen, Mat, SVD_CUTOFF};
use crate::mdp::pendulum::{PendulumState, wrap_angle};
use crate::mdp::AugmentedState;

/// Eigenvalues at most this fraction of the largest count as zero in the Gram spectrum.
pub const GRAM_ZERO_TOL: f64 = 1e-12;

/// Linear features of truncated augmented states.
pub trait FeatureMap<S>: Sync {
    fn dim(&self) -> usize;

    /// Sup bound `L` on every feature.
    fn bound(&self) -> f64;

    /// Writes `phi(x)` into `out` (length `dim()`).
    fn eval_into(&self, x: &AugmentedState<S>, out: &mut [f64]);

    fn eval(&self, x: &AugmentedState<S>) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.eval_into(x, &mut v);
        v
    }
}

/// One-hot features of a finite state, ignoring the event window.
#[derive(Debug, Clone, Copy)]
pub struct TabularFeatures {
    pub n_states: usize,
}

impl FeatureMap<usize> for TabularFeatures {
    fn dim(&self) -> usize {
        self.n_states
    }

    fn bound(&self) -> f64 {
        1.0
    }

    fn eval_into(&self, x: &AugmentedState<usize>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[x.state] = 1.0;
    }
}

/// The pendulum features: `cos, sin, theta_dot, theta` and their squares, the `T + 1` most
/// recent marks (clipped to `[-mark_clip, mark_clip]`) and their squares, and a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumFeatures {
    pub horizon: usize,
    pub mark_clip: f64,
    pub max_speed: f64,
}

/// Default feature map for the pendulum with window `T`; `d = 8 + 2 (T + 1) + 1`.
pub fn default_pendulum_features(horizon: usize) -> PendulumFeatures {
    PendulumFeatures {
        horizon,
        mark_clip: 5.0,
        max_speed: 8.0,
    }
}

impl FeatureMap<PendulumState> for PendulumFeatures {
    fn dim(&self) -> usize {
        8 + 2 * (self.horizon + 1) + 1
    }

    fn bound(&self) -> f64 {
        let pi2 = std::f64::consts::PI.powi(2);
        [1.0, pi2, self.max_speed.powi(2), self.mark_clip.powi(2)]
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn eval_into(&self, x: &AugmentedState<PendulumState>, out: &mut [f64]) {
        let th = wrap_angle(x.state.theta);
        let w = x.state.theta_dot.clamp(-self.max_speed, self.max_speed);
        let base = [th.cos(), th.sin(), w, th];
        for (i, v) in base.iter().enumerate() {
            out[i] = *v;
            out[4 + i] = v * v;
        }
        let k = self.horizon + 1;
        for j in 0..k {
            let m = x.event_window.get(j).copied().unwrap_or(0.0);
            let m = m.clamp(-self.mark_clip, self.mark_clip);
            out[8 + j] = m;
            out[8 + k + j] = m * m;
        }
        out[8 + 2 * k] = 1.0;
    }
}

/// States and rewards along one trajectory, after burn-in.
#[derive(Debug, Clone)]
pub struct SamplePath<S> {
    pub states: Vec<AugmentedState<S>>,
    pub rewards: Vec<f64>,
    pub seed: u64,
    pub burn_in: usize,
}

impl<S> SamplePath<S> {
    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.rewards.len() {
            return Err(Error::Dimension(format!(
                "{} states but {} rewards",
                self.states.len(),
                self.rewards.len()
            )));
        }
        if self.rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("rewards", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Design matrices of a path.
#[derive(Debug, Clone)]
pub struct Design {
    pub phi: Mat,
    pub phi_next: Mat,
    pub rewards: Vec<f64>,
}

pub fn build_design<S, F: FeatureMap<S> + ?Sized>(path: &SamplePath<S>, features: &F) -> Result<Design> {
    path.validate()?;
    let (n, d) = (path.len(), features.dim());
    let mut phi = Mat::zeros(n, d);
    for (t, x) in path.states.iter().enumerate() {
        features.eval_into(x, phi.row_mut(t));
    }
    if !phi.is_finite() {
        return Err(Error::NonFinite("features"));
    }
    let mut phi_next = Mat::zeros(n, d);
    for t in 1..n {
        let src = phi.row(t).to_vec();
        phi_next.row_mut(t - 1).copy_from_slice(&src);
    }
    Ok(Design {
        phi,
        phi_next,
        rewards: path.rewards.clone(),
    })
}

/// LSTD weights with diagnostics of the solve.
#[derive(Debug, Clone)]
pub struct LstdSolution {
    pub weights: Vec<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

pub fn lstd_solve(phi: &Mat, phi_next: &Mat, rewards: &[f64], gamma: f64) -> Result<LstdSolution> {
    if phi.rows() != phi_next.rows() || phi.cols() != phi_next.cols() || rewards.len() != phi.rows() {
        return Err(Error::Dimension("design matrices and rewards disagree".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", "must lie in [0, 1)"));
    }
    ensure_finite(phi.data(), "Phi")?;
    ensure_finite(phi_next.data(), "Phi'")?;
    ensure_finite(rewards, "rewards")?;
    let mut shifted = phi_next.clone();
    shifted.scale(gamma);
    let a = phi.t_mul(&phi.sub(&shifted)?)?;
    let b = phi.t_mul_vec(rewards)?;
    let sol = pinv_solve(&a, &b, SVD_CUTOFF)?;
    Ok(LstdSolution {
        weights: sol.x,
        rank: sol.rank,
        singular_values: sol.singular_values,
    })
}

/// `||f||_N = sqrt(mean f^2)`.
pub fn empirical_norm(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// `||Phi w - Proj(r + gamma Phi' w)||_N` with `Proj` the least-squares projection onto
/// the column space of `Phi`.
pub fn fixed_point_residual(weights: &[f64], phi: &Mat, phi_next: &Mat, rewards: &[f64], gamma: f64) -> Result<f64> {
    let v = phi.mul_vec(weights)?;
    let next = phi_next.mul_vec(weights)?;
    let target: Vec<f64> = rewards.iter().zip(&next).map(|(r, n)| r + gamma * n).collect();
    let projected = project(phi, &target)?;
    let diff: Vec<f64> = v.iter().zip(&projected).map(|(a, b)| a - b).collect();
    Ok(empirical_norm(&diff))
}

/// Least-squares projection of `y` onto the column space of `phi`.
pub fn project(phi: &Mat, y: &[f64]) -> Result<Vec<f64>> {
    let coef = pinv_solve(phi, y, SVD_CUTOFF)?;
    phi.mul_vec(&coef.x)
}

/// Smallest positive eigenvalue of `Phi^T Phi / N`; eigenvalues at most
/// `GRAM_ZERO_TOL * max` are treated as zero. Returns 0 for an all-zero design.
pub fn gram_min_eigenvalue(phi: &Mat) -> Result<f64> {
    if phi.rows() == 0 {
        return Err(invalid("Phi", "need at least one row"));
    }
    let mut g = phi.t_mul(phi)?;
    g.scale(1.0 / phi.rows() as f64);
    let eig = symmetric_eigen(&g)?;
    let max = eig.values.iter().cloned().fold(0.0, f64::max);
    Ok(eig
        .values
        .iter()
        .copied()
        .find(|&l| l > GRAM_ZERO_TOL * max && l > 0.0)
        .unwrap_or(0.0))
}

/// Linear value function, optionally clipped to `[-B, B]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearValueFunction {
    pub weights: Vec<f64>,
    pub clip: Option<f64>,
}

impl LinearValueFunction {
    /// Clipped at `1 / (1 - gamma)`.
    pub fn clipped(weights: Vec<f64>, gamma: f64) -> Self {
        Self {
            weights,
            clip: Some(1.0 / (1.0 - gamma)),
        }
    }

    pub fn raw(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features)
    }

    pub fn value(&self, features: &[f64]) -> f64 {
        let v = self.raw(features);
        match self.clip {
            Some(b) => v.clamp(-b, b),
            None => v,
        }
    }

    pub fn evaluate<S, F: FeatureMap<S> + ?Sized>(&self, features: &F, x: &AugmentedState<S>) -> f64 {
        self.value(&features.eval(x))
    }
}

/// Weights and diagnostics of one LSTD fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LstdReport {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub rank: usize,
    pub nu: f64,
    pub residual: f64,
    pub weights: Vec<f64>,
}

impl LstdReport {
    /// Fits LSTD on a design and collects its diagnostics.
    pub fn fit(design: &Design, gamma: f64) -> Result<Self> {
        let sol = lstd_solve(&design.phi, &design.phi_next, &design.rewards, gamma)?;
        let residual = fixed_point_residual(&sol.weights, &design.phi, &design.phi_next, &design.rewards, gamma)?;
        Ok(Self {
            n: design.phi.rows(),
            d: design.phi.cols(),
            gamma,
            rank: sol.rank,
            nu: gram_min_eigenvalue(&design.phi)?,
            residual,
            weights: sol.weights,
        })
    }

    /// `key = value` lines; weights space-separated, shortest round-trip floats.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n = {}", self.n).unwrap();
        writeln!(s, "d = {}", self.d).unwrap();
        writeln!(s, "gamma = {}", self.gamma).unwrap();
        writeln!(s, "rank = {}", self.rank).unwrap();
        writeln!(s, "nu = {}", self.nu).unwrap();
        writeln!(s, "residual = {}", self.residual).unwrap();
        let w: Vec<String> = self.weights.iter().map(|w| w.to_string()).collect();
        writeln!(s, "weights = {}", w.join(" ")).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<String> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("missing `{key}`")))
        };
        let num = |v: String, key: &str| -> Result<f64> { v.parse().map_err(|_| Error::Parse(format!("bad `{key}`"))) };
        let int = |v: String, key: &str| -> Result<usize> { v.parse().map_err(|_| Error::Parse(format!("bad `{key}`"))) };
        let weights = get("weights")?
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| Error::Parse("bad weight".into())))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            n: int(get("n")?, "n")?,
            d: int(get("d")?, "d")?,
            gamma: num(get("gamma")?, "gamma")?,
            rank: int(get("rank")?, "rank")?,
            nu: num(get("nu")?, "nu")?,
            residual: num(get("residual")?, "residual")?,
            weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(states: &[usize], rewards: &[f64]) -> SamplePath<usize> {
        SamplePath {
            states: states.iter().map(|&s| AugmentedState::new(s, vec![])).collect(),
            rewards: rewards.to_vec(),
            seed: 0,
            burn_in: 0,
        }
    }

    #[test]
    fn design_examples() {
        let f = TabularFeatures { n_states: 3 };
        let d = build_design(&path(&[2], &[0.5]), &f).unwrap();
        assert_eq!(d.phi_next.row(0), &[0.0, 0.0, 0.0]);

        let d = build_design(&path(&[0, 2, 1], &[0.1, 0.2, 0.3]), &f).unwrap();
        assert_eq!(d.phi.data(), &[1., 0., 0., 0., 0., 1., 0., 1., 0.]);
        assert_eq!(d.phi_next.data(), &[0., 0., 1., 0., 1., 0., 0., 0., 0.]);

        let one = TabularFeatures { n_states: 1 };
        let d = build_design(&path(&[0, 0, 0, 0], &[0.0; 4]), &one).unwrap();
        assert_eq!(d.phi.data(), &[1.0; 4]);
        assert_eq!(d.phi_next.data(), &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_gamma_regresses_on_reward() {
        let f = TabularFeatures { n_states: 3 };
        let d = build_design(&path(&[1, 0, 2], &[0.4, 0.9, 0.1]), &f).unwrap();
        let w = lstd_solve(&d.phi, &d.phi_next, &d.rewards, 0.0).unwrap().weights;
        for (a, b) in w.iter().zip([0.9, 0.4, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = lstd_solve(&d.phi, &d.phi_next, &[0.0; 3], 0.9).unwrap();
        assert!(z.weights.iter().all(|w| *w == 0.0));
        assert!(fixed_point_residual(&z.weights, &d.phi, &d.phi_next, &[0.0; 3], 0.9).unwrap() == 0.0);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(empirical_norm(&[0.0, 0.0]), 0.0);
        assert!((empirical_norm(&[-2.0; 5]) - 2.0).abs() < 1e-15);
        assert!((empirical_norm(&[3.0, 4.0]) - (12.5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gram_eigen_examples() {
        // identity rows, N = d: Gram = I / N
        let phi = Mat::identity(4);
        assert!((gram_min_eigenvalue(&phi).unwrap() - 0.25).abs() < 1e-14);
        // duplicated column: zero eigenvalue skipped
        let phi = Mat::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        // Gram = [[.5,.5,0],[.5,.5,0],[0,0,.5]] -> eigenvalues 0, .5, 1
        assert!((gram_min_eigenvalue(&phi).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn pendulum_feature_shape() {
        let f = default_pendulum_features(5);
        assert_eq!(f.dim(), 21);
        let x = AugmentedState::new(PendulumState { theta: 0.0, theta_dot: 0.0 }, vec![0.0; 6]);
        let v = f.eval(&x);
        // cos 0 = 1 and its square are nonzero besides the constant
        let nonzero: Vec<usize> = v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nonzero, vec![0, 4, 20]);
        let wild = AugmentedState::new(PendulumState { theta: 3.0, theta_dot: 8.0 }, vec![40.0; 6]);
        assert!(f.eval(&wild).iter().all(|x| x.abs() <= f.bound()));
    }

    #[test]
    fn clipping_and_report_roundtrip() {
        let v = LinearValueFunction::clipped(vec![100.0], 0.5);
        assert_eq!(v.value(&[1.0]), 2.0);
        assert_eq!(v.raw(&[1.0]), 100.0);
        let f = TabularFeatures { n_states: 2 };
        let d = build_design(&path(&[0, 1, 0, 1, 1], &[0.1, 0.7, 0.2, 0.9, 0.4]), &f).unwrap();
        let r = LstdReport::fit(&d, 0.8).unwrap();
        assert_eq!(r.rank, 2);
        assert!(r.residual < 1e-12);
        assert_eq!(LstdReport::from_text(&r.to_text()).unwrap(), r);
    }
}

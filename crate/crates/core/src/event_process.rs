//! Discrete-time marked Hawkes process.
//!
//! At step `t` an event occurs with probability
//! `p_t = clamp(alpha_0 + sum_{t' < t} alpha_{t - t'} E_{t'}, 0, 1)`; if it does, its mark is
//! drawn from `N(sum_{t' < t} beta_{t - t'} E_{t'} X_{t'}, sigma^2)`, otherwise the mark is 0.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::DecayKernel;
use crate::special::erf;

pub const DEFAULT_HORIZON_CAP: usize = 64;

/// Grid used by [`empirical_mark_tv`]: equal-width bins over `[-8, 8]`.
pub const TV_GRID_LO: f64 = -8.0;
pub const TV_GRID_HI: f64 = 8.0;
pub const TV_GRID_BINS: usize = 201;

fn default_mark_std() -> f64 {
    1.0
}

fn default_horizon_cap() -> usize {
    DEFAULT_HORIZON_CAP
}

/// Serializable description of a Hawkes process. Turn it into [`HawkesParams`] with
/// [`HawkesSpec::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesSpec {
    pub base_intensity: f64,
    pub excitation: DecayKernel,
    pub mark_coupling: DecayKernel,
    #[serde(default = "default_mark_std")]
    pub mark_std: f64,
    #[serde(default = "default_horizon_cap")]
    pub horizon_cap: usize,
}

impl HawkesSpec {
    pub fn build(&self) -> Result<HawkesParams> {
        HawkesParams::new(
            self.base_intensity,
            self.excitation.clone(),
            self.mark_coupling.clone(),
            self.mark_std,
            self.horizon_cap,
        )
    }
}

/// Validated process parameters with kernel tables cached up to `horizon_cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct HawkesParams {
    spec: HawkesSpec,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    stable: bool,
}

impl HawkesParams {
    pub fn new(
        base_intensity: f64,
        excitation: DecayKernel,
        mark_coupling: DecayKernel,
        mark_std: f64,
        horizon_cap: usize,
    ) -> Result<Self> {
        if !(base_intensity.is_finite() && (0.0..=1.0).contains(&base_intensity)) {
            return Err(invalid("base_intensity", "must lie in [0, 1]"));
        }
        if !(mark_std.is_finite() && mark_std > 0.0) {
            return Err(invalid("mark_std", "must be finite and > 0"));
        }
        if horizon_cap == 0 {
            return Err(invalid("horizon_cap", "must be >= 1"));
        }
        for (name, k) in [("excitation", &excitation), ("mark_coupling", &mark_coupling)] {
            k.validate()?;
            if !k.is_non_increasing() {
                return Err(invalid(name, "kernel must be non-increasing"));
            }
            if !k.is_summable() {
                return Err(Error::NonSummable(name.to_string()));
            }
        }
        let alpha = excitation.values(horizon_cap);
        let beta = mark_coupling.values(horizon_cap);
        crate::error::ensure_finite(&alpha, "excitation kernel")?;
        crate::error::ensure_finite(&beta, "mark coupling kernel")?;
        let stable = base_intensity + excitation.total()? <= 1.0;
        Ok(Self {
            spec: HawkesSpec {
                base_intensity,
                excitation,
                mark_coupling,
                mark_std,
                horizon_cap,
            },
            alpha,
            beta,
            stable,
        })
    }

    /// Exponential excitation and coupling with the default noise scale and cap.
    pub fn exponential(base_intensity: f64, excitation: (f64, f64), coupling: (f64, f64)) -> Result<Self> {
        Self::new(
            base_intensity,
            DecayKernel::exponential(excitation.0, excitation.1),
            DecayKernel::exponential(coupling.0, coupling.1),
            1.0,
            DEFAULT_HORIZON_CAP,
        )
    }

    pub fn spec(&self) -> &HawkesSpec {
        &self.spec
    }

    pub fn base_intensity(&self) -> f64 {
        self.spec.base_intensity
    }

    pub fn excitation(&self) -> &DecayKernel {
        &self.spec.excitation
    }

    pub fn mark_coupling(&self) -> &DecayKernel {
        &self.spec.mark_coupling
    }

    pub fn mark_std(&self) -> f64 {
        self.spec.mark_std
    }

    pub fn horizon_cap(&self) -> usize {
        self.spec.horizon_cap
    }

    /// `alpha_0 + sum_t alpha_t <= 1`, so the intensity never needs clamping.
    pub fn is_stable(&self) -> bool {
        self.stable
    }

    /// Kernel mass beyond `horizon_cap` that the simulation ignores: (excitation, coupling).
    pub fn truncation_residue(&self) -> Result<(f64, f64)> {
        let cap = self.spec.horizon_cap;
        Ok((
            self.spec.excitation.tail_sum(cap)?.exact,
            self.spec.mark_coupling.tail_sum(cap)?.exact,
        ))
    }

    /// Intensity from recent steps given most recent first, `(indicator, mark)`.
    pub fn intensity_recent<I>(&self, recent: I) -> f64
    where
        I: IntoIterator<Item = (bool, f64)>,
    {
        let excited: f64 = recent
            .into_iter()
            .zip(&self.alpha)
            .filter(|((e, _), _)| *e)
            .map(|(_, a)| a)
            .sum();
        (self.spec.base_intensity + excited).clamp(0.0, 1.0)
    }

    /// Mark mean from recent steps given most recent first.
    pub fn mark_mean_recent<I>(&self, recent: I) -> f64
    where
        I: IntoIterator<Item = (bool, f64)>,
    {
        recent
            .into_iter()
            .zip(&self.beta)
            .filter(|((e, _), _)| *e)
            .map(|((_, x), b)| b * x)
            .sum()
    }

    /// Draws the next `(indicator, mark)` given recent steps, most recent first.
    pub fn sample_recent<I, R>(&self, recent: I, rng: &mut R) -> (bool, f64)
    where
        I: IntoIterator<Item = (bool, f64)> + Clone,
        R: Rng + ?Sized,
    {
        let p = self.intensity_recent(recent.clone());
        let u: f64 = rng.random();
        if u < p {
            let z: f64 = rng.sample(StandardNormal);
            (true, self.mark_mean_recent(recent) + self.spec.mark_std * z)
        } else {
            (false, 0.0)
        }
    }

    /// Draws the next mark from a window of marks (most recent first); a zero mark is a
    /// non-event.
    pub fn sample_from_marks<R: Rng + ?Sized>(&self, marks: &[f64], rng: &mut R) -> f64 {
        self.sample_recent(marks.iter().map(|&x| (x != 0.0, x)), rng).1
    }

    /// Runs the process from an empty history for `steps` steps and returns the last `len`
    /// marks, most recent first (zero-padded).
    pub fn sample_marks<R: Rng + ?Sized>(&self, steps: usize, len: usize, rng: &mut R) -> Vec<f64> {
        let mut history = EventHistory::new();
        for _ in 0..steps {
            let (e, x) = sample_step(self, &history, rng);
            history.push(e, x).expect("sampled steps are consistent");
        }
        let mut out: Vec<f64> = history.recent().take(len).map(|(_, x)| x).collect();
        out.resize(len, 0.0);
        out
    }
}

/// One step of the event record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventStep {
    pub indicator: bool,
    pub mark: f64,
}

/// Ordered record of indicators and marks for steps `1..=len`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventHistory {
    steps: Vec<EventStep>,
}

impl EventHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_steps(steps: Vec<EventStep>) -> Result<Self> {
        let h = Self { steps };
        h.validate()?;
        Ok(h)
    }

    /// History where a nonzero mark is an event.
    pub fn from_marks(marks: &[f64]) -> Result<Self> {
        Self::from_steps(
            marks
                .iter()
                .map(|&mark| EventStep {
                    indicator: mark != 0.0,
                    mark,
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if !s.mark.is_finite() {
                return Err(Error::NonFinite("event mark"));
            }
            if !s.indicator && s.mark != 0.0 {
                return Err(invalid(
                    "history",
                    format!("step {} has no event but mark {}", i + 1, s.mark),
                ));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, indicator: bool, mark: f64) -> Result<()> {
        if !mark.is_finite() {
            return Err(Error::NonFinite("event mark"));
        }
        if !indicator && mark != 0.0 {
            return Err(invalid("mark", "non-event steps must carry mark 0"));
        }
        self.steps.push(EventStep { indicator, mark });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[EventStep] {
        &self.steps
    }

    pub fn marks(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.mark).collect()
    }

    /// Steps from the most recent backwards.
    pub fn recent(&self) -> impl Iterator<Item = (bool, f64)> + Clone + '_ {
        self.steps.iter().rev().map(|s| (s.indicator, s.mark))
    }

    pub fn event_count(&self) -> usize {
        self.steps.iter().filter(|s| s.indicator).count()
    }

    /// Writes columns `t,indicator,mark` with `t` starting at 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "indicator", "mark"])?;
        for (i, s) in self.steps.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                u8::from(s.indicator).to_string(),
                s.mark.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut steps = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |col: usize| -> Result<&str> {
                rec.get(col)
                    .ok_or_else(|| Error::Parse(format!("row {}: missing column {col}", i + 1)))
            };
            let t: usize = parse(0)?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: t: {e}", i + 1)))?;
            if t != i + 1 {
                return Err(Error::Parse(format!("row {}: expected t = {}, got {t}", i + 1, i + 1)));
            }
            let indicator = match parse(1)?.trim() {
                "0" => false,
                "1" => true,
                other => return Err(Error::Parse(format!("row {}: indicator {other}", i + 1))),
            };
            let mark: f64 = parse(2)?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: mark: {e}", i + 1)))?;
            steps.push(EventStep { indicator, mark });
        }
        Self::from_steps(steps)
    }
}

/// Event probability for the step following `history`.
pub fn intensity(params: &HawkesParams, history: &EventHistory) -> f64 {
    params.intensity_recent(history.recent())
}

/// Mean of the next mark given an event.
pub fn mark_mean(params: &HawkesParams, history: &EventHistory) -> f64 {
    params.mark_mean_recent(history.recent())
}

/// Draws the next `(indicator, mark)`; the history is left untouched.
pub fn sample_step<R: Rng + ?Sized>(
    params: &HawkesParams,
    history: &EventHistory,
    rng: &mut R,
) -> (bool, f64) {
    params.sample_recent(history.recent(), rng)
}

/// `N_T = alpha_T + erf(beta_T / (2 sqrt 2))`, a bound on the total-variation influence of
/// an event `T` steps old on the next mark.
pub fn mark_tv_bound(params: &HawkesParams, lag: usize) -> Result<f64> {
    if lag == 0 {
        return Err(invalid("T", "must be >= 1"));
    }
    let a = params.excitation().value(lag);
    let b = params.mark_coupling().value(lag);
    Ok(a + erf(b / (2.0 * std::f64::consts::SQRT_2)))
}

/// Simulates `length` steps from an empty history with a ChaCha8 stream seeded by `seed`.
pub fn rollout_events(params: &HawkesParams, length: usize, seed: u64) -> EventHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = EventHistory::new();
    for _ in 0..length {
        let (e, x) = sample_step(params, &history, &mut rng);
        history.steps.push(EventStep { indicator: e, mark: x });
    }
    history
}

fn tv_bin(mark: f64) -> usize {
    let w = (TV_GRID_HI - TV_GRID_LO) / TV_GRID_BINS as f64;
    let k = ((mark - TV_GRID_LO) / w).floor();
    k.clamp(0.0, (TV_GRID_BINS - 1) as f64) as usize
}

/// Empirical total variation between the next-step laws under two histories, estimated from
/// `samples` draws each. Non-events form their own category; marks are binned on the fixed
/// grid with out-of-range mass in the edge bins.
pub fn empirical_mark_tv(
    params: &HawkesParams,
    a: &EventHistory,
    b: &EventHistory,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts_a = vec![0u64; TV_GRID_BINS + 1];
    let mut counts_b = vec![0u64; TV_GRID_BINS + 1];
    for (h, counts) in [(a, &mut counts_a), (b, &mut counts_b)] {
        for _ in 0..samples {
            let (e, x) = sample_step(params, h, &mut rng);
            let slot = if e { tv_bin(x) } else { TV_GRID_BINS };
            counts[slot] += 1;
        }
    }
    let n = samples as f64;
    0.5 * counts_a
        .iter()
        .zip(&counts_b)
        .map(|(&ca, &cb)| (ca as f64 / n - cb as f64 / n).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exp_params(base: f64, c: f64, rate: f64) -> HawkesParams {
        HawkesParams::exponential(base, (c, rate), (c, rate)).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let p = exp_params(0.1, 0.1, 1.0);
        assert_eq!(intensity(&p, &EventHistory::new()), 0.1);
        let h = EventHistory::from_marks(&[1.3]).unwrap();
        let expected = 0.1 + 0.1 * (-1.0f64).exp();
        assert!((intensity(&p, &h) - expected).abs() < 1e-15);

        let unstable = exp_params(0.5, 1.0, 0.1);
        assert!(!unstable.is_stable());
        let busy = EventHistory::from_marks(&[1.0; 30]).unwrap();
        assert_eq!(intensity(&unstable, &busy), 1.0);
    }

    #[test]
    fn mark_mean_examples() {
        let p = HawkesParams::new(
            0.2,
            DecayKernel::zero(),
            DecayKernel::tabulated(vec![0.5]),
            1.0,
            8,
        )
        .unwrap();
        assert_eq!(mark_mean(&p, &EventHistory::new()), 0.0);
        assert_eq!(mark_mean(&p, &EventHistory::from_marks(&[2.0]).unwrap()), 1.0);
        assert_eq!(mark_mean(&p, &EventHistory::from_marks(&[0.0, 0.0]).unwrap()), 0.0);
    }

    #[test]
    fn sample_step_zero_intensity() {
        let p = exp_params(0.0, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(sample_step(&p, &EventHistory::new(), &mut rng), (false, 0.0));
        }
    }

    #[test]
    fn sample_step_marks_standard_normal() {
        let p = HawkesParams::new(1.0, DecayKernel::zero(), DecayKernel::zero(), 1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let (e, x) = sample_step(&p, &EventHistory::new(), &mut rng);
            assert!(e);
            sum += x;
        }
        assert!((sum / n as f64).abs() < 0.02);
    }

    #[test]
    fn sample_step_deterministic() {
        let p = exp_params(0.4, 0.2, 1.0);
        let h = EventHistory::from_marks(&[0.0, 1.5, -0.2]).unwrap();
        let a = sample_step(&p, &h, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_step(&p, &h, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn tv_bound_examples() {
        let zero = HawkesParams::new(0.3, DecayKernel::zero(), DecayKernel::zero(), 1.0, 8).unwrap();
        assert_eq!(mark_tv_bound(&zero, 1).unwrap(), 0.0);
        assert!(mark_tv_bound(&zero, 0).is_err());

        let p = exp_params(0.0, 1.0, 1.0);
        let e1 = (-1.0f64).exp();
        let expected = e1 + erf(e1 / (2.0 * 2f64.sqrt()));
        assert!((mark_tv_bound(&p, 1).unwrap() - expected).abs() < 1e-15);
        assert!(mark_tv_bound(&p, 800).unwrap() < 1e-15);
    }

    #[test]
    fn rollout_examples() {
        let p = exp_params(0.3, 0.0, 1.0);
        assert!(rollout_events(&p, 0, 1).is_empty());
        let h = rollout_events(&p, 100_000, 7);
        let rate = h.event_count() as f64 / h.len() as f64;
        assert!((rate - 0.3).abs() < 0.01, "rate {rate}");

        let always = exp_params(1.0, 0.1, 1.0);
        assert!(rollout_events(&always, 500, 2).steps().iter().all(|s| s.indicator));
    }

    #[test]
    fn rollout_consistent_with_sample_step() {
        let p = exp_params(0.2, 0.3, 0.7);
        let h = rollout_events(&p, 200, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut prefix = EventHistory::new();
        for s in h.steps() {
            let (e, x) = sample_step(&p, &prefix, &mut rng);
            assert_eq!((e, x), (s.indicator, s.mark));
            prefix.push(e, x).unwrap();
        }
    }

    #[test]
    fn history_validation_and_csv() {
        assert!(EventHistory::from_steps(vec![EventStep { indicator: false, mark: 0.5 }]).is_err());
        let p = exp_params(0.3, 0.2, 1.0);
        let h = rollout_events(&p, 50, 4);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,indicator,mark\n1,"));
        assert_eq!(EventHistory::read_csv(buf.as_slice()).unwrap(), h);
    }

    #[test]
    fn tv_bound_summable_and_truncation_residue() {
        let p = HawkesParams::new(
            0.1,
            DecayKernel::exponential(0.5, 1.0),
            DecayKernel::polynomial(1.0, 2.0),
            1.0,
            64,
        )
        .unwrap();
        let total: f64 = (1..2000).map(|t| mark_tv_bound(&p, t).unwrap()).sum();
        assert!(total.is_finite());
        let (ra, rb) = p.truncation_residue().unwrap();
        assert!(ra < 1e-25 && rb > 0.0 && rb < 0.02);
    }

    proptest! {
        #[test]
        fn non_event_marks_are_zero(seed in 0u64..500, base in 0.0f64..0.6, c in 0.0f64..0.4) {
            let p = exp_params(base, c, 1.0);
            let h = rollout_events(&p, 300, seed);
            prop_assert!(h.steps().iter().all(|s| s.indicator || s.mark == 0.0));
        }

        #[test]
        fn intensity_monotone_in_added_event(
            marks in proptest::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], 0..40),
            pos in 0usize..40,
        ) {
            let p = exp_params(0.05, 0.2, 0.5);
            let mut more = marks.clone();
            if !more.is_empty() {
                let i = pos % more.len();
                if more[i] == 0.0 { more[i] = 1.0; }
            }
            let a = intensity(&p, &EventHistory::from_marks(&marks).unwrap());
            let b = intensity(&p, &EventHistory::from_marks(&more).unwrap());
            prop_assert!(b >= a);
        }

        #[test]
        fn tv_bound_non_increasing(c in 0.0f64..2.0, rate in 0.05f64..3.0, t in 1usize..200) {
            let p = exp_params(0.0, c, rate);
            prop_assert!(mark_tv_bound(&p, t + 1).unwrap() <= mark_tv_bound(&p, t).unwrap());
        }
    }
}

use exomdp::event_process::{
    empirical_mark_tv, intensity, mark_mean, mark_tv_bound, rollout_events, sample_step,
    EventHistory, HawkesParams,
};
use exomdp::kernel::DecayKernel;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Intensity and mark mean written out term by term for a short history.
#[test]
fn intensity_and_mark_mean_by_hand() {
    let p = HawkesParams::exponential(0.1, (0.3, 0.5), (0.8, 0.25)).unwrap();
    // Oldest first: event 1.5, nothing, event -2.0. Most recent is lag 1.
    let h = EventHistory::from_marks(&[1.5, 0.0, -2.0]).unwrap();
    let a = |t: f64| 0.3 * (-0.5 * t).exp();
    let b = |t: f64| 0.8 * (-0.25 * t).exp();
    let lam = 0.1 + a(1.0) + a(3.0);
    let mu = b(1.0) * -2.0 + b(3.0) * 1.5;
    assert!((intensity(&p, &h) - lam).abs() < 1e-15);
    assert!((mark_mean(&p, &h) - mu).abs() < 1e-15);
}

#[test]
fn empty_history_uses_base_intensity() {
    let p = HawkesParams::exponential(0.25, (0.3, 0.5), (0.8, 0.25)).unwrap();
    let h = EventHistory::new();
    assert_eq!(intensity(&p, &h), 0.25);
    assert_eq!(mark_mean(&p, &h), 0.0);
}

/// The empirical event frequency and mark moments agree with the conditional law.
#[test]
fn one_step_law_matches_sampling() {
    let p = HawkesParams::exponential(0.2, (0.3, 0.7), (0.9, 0.4)).unwrap();
    let h = EventHistory::from_marks(&[0.0, 2.0, 0.0, 1.0]).unwrap();
    let lam = intensity(&p, &h);
    let mu = mark_mean(&p, &h);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 200_000;
    let mut events = 0usize;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let (e, x) = sample_step(&p, &h, &mut rng);
        if e {
            events += 1;
            s1 += x;
            s2 += x * x;
        } else {
            assert_eq!(x, 0.0);
        }
    }
    let freq = events as f64 / n as f64;
    let se = (lam * (1.0 - lam) / n as f64).sqrt();
    assert!((freq - lam).abs() < 5.0 * se, "freq {freq} vs {lam}");
    let m = s1 / events as f64;
    let var = s2 / events as f64 - m * m;
    let sd = p.mark_std();
    assert!((m - mu).abs() < 5.0 * sd / (events as f64).sqrt(), "mean {m} vs {mu}");
    assert!((var - sd * sd).abs() < 0.02 * sd * sd, "var {var}");
}

/// Long-run event rate of a stable process is `mu / (1 - sum alpha)` when the intensity
/// never saturates.
#[test]
fn stationary_rate_matches_renewal_identity() {
    let (base, c, rate) = (0.1, 0.3, 0.6);
    let p = HawkesParams::exponential(base, (c, rate), (0.5, 1.0)).unwrap();
    let total: f64 = (1..10_000).map(|t| c * (-rate * t as f64).exp()).sum();
    let expected = base / (1.0 - total);
    let h = rollout_events(&p, 400_000, 5);
    let observed = h.event_count() as f64 / h.len() as f64;
    assert!((observed - expected).abs() < 0.01, "{observed} vs {expected}");
}

#[test]
fn rollouts_are_deterministic_per_seed() {
    let p = HawkesParams::exponential(0.2, (0.3, 0.5), (0.5, 0.5)).unwrap();
    assert_eq!(rollout_events(&p, 500, 3), rollout_events(&p, 500, 3));
    assert_ne!(rollout_events(&p, 500, 3), rollout_events(&p, 500, 4));
}

#[test]
fn csv_roundtrip_preserves_history() {
    let p = HawkesParams::exponential(0.3, (0.3, 0.5), (0.5, 0.5)).unwrap();
    let h = rollout_events(&p, 300, 9);
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let back = EventHistory::read_csv(buf.as_slice()).unwrap();
    assert_eq!(h, back);
}

#[test]
fn malformed_csv_is_rejected() {
    let text = "t,indicator,mark\n1,0,0.5\n";
    assert!(EventHistory::read_csv(text.as_bytes()).is_err());
}

#[test]
fn invalid_parameters_are_rejected() {
    let k = DecayKernel::exponential(0.2, 1.0);
    assert!(HawkesParams::new(1.5, k.clone(), k.clone(), 1.0, 10).is_err());
    assert!(HawkesParams::new(0.1, k.clone(), k.clone(), 0.0, 10).is_err());
    assert!(HawkesParams::new(0.1, k.clone(), k.clone(), 1.0, 0).is_err());
    let rising = DecayKernel::tabulated(vec![0.1, 0.3]);
    assert!(HawkesParams::new(0.1, rising, k, 1.0, 10).is_err());
}

/// The influence bound dominates the observed total-variation effect of one old event.
#[test]
fn influence_bound_dominates_observed_effect() {
    let p = HawkesParams::exponential(0.2, (0.4, 0.8), (0.6, 0.8)).unwrap();
    for lag in 1..=4usize {
        let mut with = vec![0.0; lag];
        with[0] = 1.0;
        let without = vec![0.0; lag];
        let a = EventHistory::from_marks(&with).unwrap();
        let b = EventHistory::from_marks(&without).unwrap();
        let tv = empirical_mark_tv(&p, &a, &b, 100_000, lag as u64);
        let bound = mark_tv_bound(&p, lag).unwrap();
        assert!(tv <= bound + 0.02, "lag {lag}: {tv} > {bound}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn non_event_steps_carry_zero_marks(
        base in 0.0..0.5f64, c in 0.0..0.4f64, rate in 0.2..2.0f64, seed in any::<u64>()
    ) {
        let p = HawkesParams::exponential(base, (c, rate), (c, rate)).unwrap();
        let h = rollout_events(&p, 200, seed);
        prop_assert_eq!(h.len(), 200);
        for s in h.steps() {
            prop_assert!(s.indicator || s.mark == 0.0);
        }
    }

    #[test]
    fn intensity_stays_a_probability(
        base in 0.0..1.0f64, c in 0.0..1.0f64, rate in 0.05..2.0f64,
        marks in proptest::collection::vec(-3.0..3.0f64, 0..30)
    ) {
        let p = HawkesParams::exponential(base, (c, rate), (c, rate)).unwrap();
        let h = EventHistory::from_marks(&marks).unwrap();
        let lam = intensity(&p, &h);
        prop_assert!((0.0..=1.0).contains(&lam));
    }
}

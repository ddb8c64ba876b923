//! Bound calculators: monotonicity, minimality and agreement with brute-force sums.

use proptest::prelude::*;

use exomdp::bounds::{
    burn_in_length, explain_lstd_bound, gram_eigenvalue_lower_bound, horizon_for_epsilon, lambda1, lambda2, lambda_gram,
    lstd_expected_error_bound, suboptimality_epsilon, tail_sum, DecaySpec, LstdBoundInputs, MixingParams,
};
use exomdp::kernel::DecayKernel;

/// Smallest terms first to keep the round-off of long sums small.
fn brute_tail(k: &DecayKernel, t: usize, terms: usize) -> f64 {
    (t + 1..t + 1 + terms).rev().map(|j| k.value(j)).sum()
}

fn inputs(n: usize) -> LstdBoundInputs {
    LstdBoundInputs {
        n,
        d: 5,
        feature_bound: 1.0,
        gamma: 0.9,
        delta: 0.05,
        nu: 0.1,
        omega: 0.1,
        alpha_star_norm: 1.0,
        inherent_error: 0.0,
    }
}

#[test]
fn polynomial_tail_matches_long_sum_with_integral_remainder() {
    // sum_{t > T} 1 / (1 + t^3): brute force to 10^6 terms plus the integral of the rest
    let k = DecayKernel::polynomial(1.0, 3.0);
    for t in [0usize, 1, 5, 20] {
        let terms = 1_000_000;
        let last = (t + terms) as f64 + 0.5;
        let brute = brute_tail(&k, t, terms) + 1.0 / (2.0 * last * last);
        let lib = tail_sum(&k, t).unwrap().exact;
        assert!((lib - brute).abs() < 1e-12, "T={t}: {lib} vs {brute}");
    }
}

#[test]
fn tabulated_tail_is_plain_sum() {
    let k = DecayKernel::tabulated(vec![0.5, 0.25, 0.125]);
    assert_eq!(tail_sum(&k, 0).unwrap().exact, 0.875);
    assert_eq!(tail_sum(&k, 2).unwrap().exact, 0.125);
    assert_eq!(tail_sum(&k, 3).unwrap().exact, 0.0);
}

#[test]
fn zero_kernels_give_zero_bounds() {
    let spec = DecaySpec::zero();
    assert_eq!(suboptimality_epsilon(&spec, 0.9, 0).unwrap(), 0.0);
    assert_eq!(horizon_for_epsilon(&spec, 0.9, 0.1).unwrap(), 0);
}

#[test]
fn lambda_constants_differ_only_in_the_leading_term() {
    let (n, d, delta) = (1000, 4, 0.1);
    let diff = lambda_gram(n, d, delta, 1.0) - lambda1(n, d, delta, 1.0);
    assert!((diff - (18.0f64 / 16.0).ln()).abs() < 1e-12);
    let l2 = (std::f64::consts::E / delta).ln() + (n as f64).ln();
    assert!((lambda2(n, delta, 1.0) - l2).abs() < 1e-12);
}

#[test]
fn lstd_bound_terms_sum_to_total() {
    let spec = DecaySpec {
        m_kernel: DecayKernel::exponential(0.5, 1.0),
        n_kernel: DecayKernel::exponential(0.5, 1.0),
    };
    let e = explain_lstd_bound(&inputs(10_000), &spec, 3, &MixingParams::default()).unwrap();
    let sum: f64 = e.terms.iter().map(|t| t.value).sum();
    assert!((sum - e.total).abs() < 1e-12 * e.total);
    assert_eq!(e.terms.len(), 4);
}

#[test]
fn gram_bound_becomes_feasible_with_enough_samples() {
    let mix = MixingParams::default();
    let small = gram_eigenvalue_lower_bound(0.5, 100, 3, 0.05, &mix, 1.0).unwrap();
    let large = gram_eigenvalue_lower_bound(0.5, 1_000_000_000, 3, 0.05, &mix, 1.0).unwrap();
    assert!(!small.feasible && small.value == 0.0);
    assert!(large.feasible && large.value > 0.0 && large.value <= 0.5 / 4.0);
}

#[test]
fn invalid_inputs_are_rejected() {
    let mix = MixingParams::default();
    assert!(burn_in_length(100, 2.0, &mix).is_err());
    assert!(burn_in_length(100, 0.0, &mix).is_err());
    let spec = DecaySpec::zero();
    assert!(suboptimality_epsilon(&spec, 1.0, 0).is_err());
    assert!(tail_sum(&DecayKernel::polynomial(1.0, 1.0), 0).is_err());
}

proptest! {
    #[test]
    fn exponential_tails_agree_and_integral_dominates(c in 0.0f64..3.0, rate in 0.05f64..4.0, t in 0usize..40) {
        let k = DecayKernel::exponential(c, rate);
        let ts = tail_sum(&k, t).unwrap();
        let brute = brute_tail(&k, t, 20_000);
        prop_assert!((ts.exact - brute).abs() <= 1e-10 * brute.max(1e-300) + 1e-300);
        prop_assert!(ts.integral_bound.unwrap() >= ts.exact);
        prop_assert!(tail_sum(&k, t + 1).unwrap().exact <= ts.exact);
    }

    #[test]
    fn horizon_is_minimal(c in 0.01f64..1.0, rate in 0.1f64..3.0, g in 0.1f64..0.95, eps in 0.001f64..1.0) {
        let spec = DecaySpec { m_kernel: DecayKernel::exponential(c, rate), n_kernel: DecayKernel::exponential(c, rate) };
        let t = horizon_for_epsilon(&spec, g, eps).unwrap();
        let target = eps * (1.0 - g).powi(2) / 4.0;
        let (m, n) = spec.tails(t).unwrap();
        prop_assert!(m <= target && n <= target);
        if t > 0 {
            let (m, n) = spec.tails(t - 1).unwrap();
            prop_assert!(m > target || n > target);
        }
    }

    #[test]
    fn burn_in_grows_with_samples(n in 1usize..1_000_000, b in 0.01f64..1.0) {
        let mix = MixingParams { beta_bar: 1.0, b, kappa: 1.0 };
        prop_assert!(burn_in_length(n * 2, 0.05, &mix).unwrap() >= burn_in_length(n, 0.05, &mix).unwrap());
    }

    #[test]
    fn lstd_bound_grows_with_the_tail(t in 0usize..8) {
        let spec = DecaySpec { m_kernel: DecayKernel::exponential(0.5, 1.0), n_kernel: DecayKernel::exponential(0.5, 1.0) };
        let mix = MixingParams::default();
        let shorter = lstd_expected_error_bound(&inputs(5000), &spec, t, &mix).unwrap();
        let longer = lstd_expected_error_bound(&inputs(5000), &spec, t + 1, &mix).unwrap();
        prop_assert!(longer <= shorter);
    }
}

//! Pathwise LSTD against closed-form nalgebra solutions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use exomdp::linalg::Mat;
use exomdp::lstd::{
    build_design, default_pendulum_features, fixed_point_residual, gram_min_eigenvalue, lstd_solve, project, FeatureMap,
    LinearValueFunction, SamplePath, TabularFeatures,
};
use exomdp::mdp::{AugmentedState, PendulumState};

fn random_design(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut next = rows[1..].to_vec();
    next.push(vec![0.0; d]);
    let r = (0..n).map(|_| rng.random::<f64>()).collect();
    (rows, next, r)
}

fn to_dense(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn tabular_path(p: &[[f64; 2]; 2], r: &[f64; 2], n: usize, seed: u64) -> SamplePath<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = 0usize;
    let mut states = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        states.push(AugmentedState::new(s, Vec::new()));
        rewards.push(r[s]);
        s = if rng.random::<f64>() < p[s][0] { 0 } else { 1 };
    }
    SamplePath { states, rewards, seed, burn_in: 0 }
}

#[test]
fn solution_matches_direct_inverse() {
    let (rows, next, r) = random_design(1, 300, 6);
    let g = 0.95;
    let (p, pn) = (to_dense(&rows), to_dense(&next));
    let a = p.transpose() * (&p - &pn * g);
    let b = p.transpose() * DVector::from_vec(r.clone());
    let alpha = a.lu().solve(&b).unwrap();
    let sol = lstd_solve(&Mat::from_rows(&rows).unwrap(), &Mat::from_rows(&next).unwrap(), &r, g).unwrap();
    assert_eq!(sol.rank, 6);
    for (x, y) in sol.weights.iter().zip(alpha.iter()) {
        assert!((x - y).abs() < 1e-9 * y.abs().max(1.0));
    }
}

#[test]
fn design_for_constant_feature() {
    struct One;
    impl FeatureMap<usize> for One {
        fn dim(&self) -> usize {
            1
        }
        fn bound(&self) -> f64 {
            1.0
        }
        fn eval_into(&self, _: &AugmentedState<usize>, out: &mut [f64]) {
            out[0] = 1.0;
        }
    }
    let path = tabular_path(&[[0.5, 0.5], [0.5, 0.5]], &[0.0, 1.0], 5, 0);
    let d = build_design(&path, &One).unwrap();
    assert_eq!(d.phi.data(), &[1.0; 5]);
    assert_eq!(d.phi_next.data(), &[1.0, 1.0, 1.0, 1.0, 0.0]);
}

#[test]
fn stationary_two_state_chain_recovers_exact_values() {
    let p = [[0.7, 0.3], [0.4, 0.6]];
    let r = [0.2, 0.9];
    let g = 0.7;
    let pm = DMatrix::from_fn(2, 2, |i, j| p[i][j]);
    let v = (DMatrix::identity(2, 2) - pm * g).lu().solve(&DVector::from_vec(r.to_vec())).unwrap();
    let path = tabular_path(&p, &r, 100_000, 3);
    let d = build_design(&path, &TabularFeatures { n_states: 2 }).unwrap();
    let sol = lstd_solve(&d.phi, &d.phi_next, &d.rewards, g).unwrap();
    for (a, b) in sol.weights.iter().zip(v.iter()) {
        assert!((a - b).abs() < 0.02, "{a} vs {b}");
    }
}

#[test]
fn gram_eigenvalue_matches_nalgebra_and_skips_null_directions() {
    let (mut rows, _, _) = random_design(2, 50, 4);
    for row in &mut rows {
        row.push(row[0]); // duplicated column
    }
    let p = to_dense(&rows);
    let gram = p.transpose() * &p / rows.len() as f64;
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let smallest_positive = eig.iter().cloned().filter(|&e| e > 1e-12 * max).fold(f64::INFINITY, f64::min);
    let lib = gram_min_eigenvalue(&Mat::from_rows(&rows).unwrap()).unwrap();
    assert!((lib - smallest_positive).abs() < 1e-10 * max);
}

#[test]
fn identity_rows_give_one_over_n() {
    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let nu = gram_min_eigenvalue(&Mat::from_rows(&rows).unwrap()).unwrap();
    assert!((nu - 0.25).abs() < 1e-12);
}

#[test]
fn projection_matches_normal_equations() {
    let (rows, _, y) = random_design(5, 40, 3);
    let p = to_dense(&rows);
    let coef = (p.transpose() * &p).lu().solve(&(p.transpose() * DVector::from_vec(y.clone()))).unwrap();
    let fitted = &p * coef;
    let lib = project(&Mat::from_rows(&rows).unwrap(), &y).unwrap();
    for (a, b) in lib.iter().zip(fitted.iter()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn pendulum_features_bounded_and_sized() {
    let f = default_pendulum_features(5);
    assert_eq!(f.dim(), 21);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let s = PendulumState { theta: rng.random_range(-4.0..4.0), theta_dot: rng.random_range(-20.0..20.0) };
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-30.0..30.0)).collect();
        let v = f.eval(&AugmentedState::new(s, w));
        assert!(v.iter().all(|x| x.abs() <= f.bound()));
    }
    let zero = f.eval(&AugmentedState::new(PendulumState { theta: 0.0, theta_dot: 0.0 }, vec![0.0; 6]));
    // cos 0 = 1 and its square are the only nonzero state features besides the constant
    assert_eq!(zero.iter().filter(|x| **x != 0.0).count(), 3);
}

#[test]
fn clipped_value_stays_in_range() {
    let v = LinearValueFunction::clipped(vec![100.0, -100.0], 0.9);
    assert!((v.value(&[1.0, 0.0]) - 1.0 / (1.0 - 0.9)).abs() < 1e-12);
    assert!((v.value(&[0.0, 1.0]) + 1.0 / (1.0 - 0.9)).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn residual_vanishes_at_the_solution(seed in 0u64..100_000, g in 0.0f64..0.99) {
        let (rows, next, r) = random_design(seed, 120, 5);
        let (phi, phi_next) = (Mat::from_rows(&rows).unwrap(), Mat::from_rows(&next).unwrap());
        let sol = lstd_solve(&phi, &phi_next, &r, g).unwrap();
        prop_assert!(fixed_point_residual(&sol.weights, &phi, &phi_next, &r, g).unwrap() < 1e-8);
    }

    #[test]
    fn zero_discount_is_least_squares(seed in 0u64..100_000) {
        let (rows, next, r) = random_design(seed, 60, 4);
        let sol = lstd_solve(&Mat::from_rows(&rows).unwrap(), &Mat::from_rows(&next).unwrap(), &r, 0.0).unwrap();
        let p = to_dense(&rows);
        let ls = (p.transpose() * &p).lu().solve(&(p.transpose() * DVector::from_vec(r))).unwrap();
        for (a, b) in sol.weights.iter().zip(ls.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

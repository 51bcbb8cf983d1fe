mod common;

use common::*;
use lcga::likelihood::log_sum_exp;
use lcga::normal;
use lcga::{
    class_membership_probs, mixture_loglik, mixture_loglik_grad, probit_category_probs, series_loglik_given_class,
    LongitudinalDataset, Measurement, ModelSpec, ParameterSet,
};
use proptest::prelude::*;
use rand::Rng;

/// Central differences of `mixture_loglik` over the flat layout.
fn fd_gradient(spec: &ModelSpec, params: &ParameterSet, data: &LongitudinalDataset, h: f64) -> Vec<f64> {
    let layout = spec.layout(data.covariate_dim());
    let x = params.to_flat(&layout);
    (0..x.len())
        .map(|i| {
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            let f = |v: &[f64]| {
                let p = ParameterSet::from_flat(spec, &layout, params.time_scale, v);
                mixture_loglik(spec, &p, data).unwrap()
            };
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn probit_probabilities_form_a_distribution(
        first in -5.0f64..5.0,
        gaps in proptest::collection::vec(0.01f64..3.0, 1..6),
        mu in -10.0f64..10.0,
    ) {
        let mut eta = vec![first];
        for g in gaps {
            let last = *eta.last().unwrap();
            eta.push(last + g);
        }
        let probs = probit_category_probs(&eta, mu).unwrap();
        prop_assert_eq!(probs.len(), eta.len() + 1);
        prop_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        let total: f64 = probs.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "sum = {}", total);
    }
}

#[test]
fn probit_series_sums_to_one_over_outcome_space() {
    let spec = probit3(2, 2, false);
    let mut r = rng(11);
    for _ in 0..5 {
        let params = random_params(&mut r, &spec, 0, 3.0);
        for k in 0..2 {
            let mut total = 0.0;
            for code in 0..27 {
                let scores = vec![code % 3 + 1, code / 3 % 3 + 1, code / 9 + 1];
                let s = subject(0, vec![1, 2, 3], scores, vec![]);
                total += series_loglik_given_class(&spec, &params, &s, k).exp();
            }
            assert!((total - 1.0).abs() <= 1e-8, "total = {total}");
        }
    }
}

#[test]
fn mixture_matches_direct_enumeration() {
    // 2 subjects, 2 periods, K = 2, M = 3; probabilities multiplied directly.
    let spec = probit3(2, 1, true);
    let subjects = vec![
        subject(0, vec![1, 2], vec![1, 3], vec![0.5]),
        subject(1, vec![1, 2], vec![2, 2], vec![-1.0]),
    ];
    let data = LongitudinalDataset::new(subjects, 2, (1, 3)).unwrap();
    let mut r = rng(5);
    for _ in 0..10 {
        let params = random_params(&mut r, &spec, 1, 2.0);
        let eta = params.thresholds().unwrap();
        let mut expected = 0.0;
        for s in data.subjects() {
            let z = s.covariates[0];
            let e0 = (params.membership_intercepts[0] + params.membership_slopes[0][0] * z).exp();
            let pi = [e0 / (e0 + 1.0), 1.0 / (e0 + 1.0)];
            let mut mix = 0.0;
            for (k, &pk) in pi.iter().enumerate() {
                let mut prod = 1.0;
                for (&t, &y) in s.times.iter().zip(&s.scores) {
                    let mu = params.trajectory[k][0] + params.trajectory[k][1] * t as f64 / 2.0;
                    let upper = if y == 3 {
                        1.0
                    } else {
                        normal::cdf(eta[y as usize - 1] - mu)
                    };
                    let lower = if y == 1 {
                        0.0
                    } else {
                        normal::cdf(eta[y as usize - 2] - mu)
                    };
                    prod *= upper - lower;
                }
                mix += pk * prod;
            }
            expected += mix.ln();
        }
        let got = mixture_loglik(&spec, &params, &data).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }
}

#[test]
fn mixture_invariant_under_label_permutation() {
    let perms: [[usize; 3]; 5] = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut r = rng(21);
    for spec in [probit3(3, 2, true), cnorm10(3, 2, true)] {
        let bounds = spec.family.outcome_range();
        let data = random_dataset(&mut r, 12, 4, bounds, 2);
        for _ in 0..5 {
            let params = random_params(&mut r, &spec, 2, 4.0);
            let base = mixture_loglik(&spec, &params, &data).unwrap();
            for perm in perms {
                let permuted = params.permute_classes(&perm);
                permuted.validate(&spec, 2).unwrap();
                let v = mixture_loglik(&spec, &permuted, &data).unwrap();
                assert!((v - base).abs() <= 1e-10, "{perm:?}: {v} vs {base}");
            }
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(1234);
    for spec in [probit3(3, 2, true), cnorm10(3, 2, true)] {
        let bounds = spec.family.outcome_range();
        let mut worst: f64 = 0.0;
        for point in 0..100 {
            let data = random_dataset(&mut r, 5, 4, bounds, 2);
            let params = random_params(&mut r, &spec, 2, 4.0);
            let analytic = mixture_loglik_grad(&spec, &params, &data).unwrap();
            let numeric = fd_gradient(&spec, &params, &data, 1e-5);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-5, "{:?} point {point}: relative error {err}", spec.family);
            worst = worst.max(err);
        }
        println!("{:?}: worst relative gradient error {worst:e}", spec.family);
    }
}

#[test]
fn gradient_in_censored_tails() {
    // scores at both bounds with means far outside the range
    let spec = cnorm10(1, 0, false);
    let subjects = vec![
        subject(0, vec![1], vec![0], vec![]),
        subject(1, vec![1], vec![10], vec![]),
        subject(2, vec![1], vec![4], vec![]),
    ];
    let data = LongitudinalDataset::new(subjects, 1, (0, 10)).unwrap();
    for mu in [-25.0, -6.0, 5.0, 16.0, 30.0] {
        let params = ParameterSet::single_class(vec![mu], Measurement::CensoredNormal { sigma: 1.3 }, 1.0);
        let analytic = mixture_loglik_grad(&spec, &params, &data).unwrap();
        let numeric = fd_gradient(&spec, &params, &data, 1e-5);
        assert!(max_relative_error(&analytic, &numeric) <= 1e-5, "mu = {mu}");
    }
}

#[test]
fn symmetric_classes_have_equal_intercept_gradients() {
    let spec = probit3(3, 1, false);
    let mut r = rng(3);
    let data = random_dataset(&mut r, 8, 3, (1, 3), 0);
    let params = ParameterSet {
        membership_intercepts: vec![0.0, 0.0],
        membership_slopes: vec![],
        trajectory: vec![vec![0.0, 0.0]; 3],
        measurement: Measurement::CumulativeProbit {
            raw_thresholds: vec![-0.3, 0.0],
        },
        time_scale: 3.0,
    };
    let numeric = fd_gradient(&spec, &params, &data, 1e-5);
    let analytic = mixture_loglik_grad(&spec, &params, &data).unwrap();
    assert!((numeric[0] - numeric[1]).abs() < 1e-8);
    assert!((analytic[0] - analytic[1]).abs() < 1e-12);
}

#[test]
fn membership_probabilities_sum_to_one() {
    let spec = probit3(4, 0, true);
    let mut r = rng(9);
    for _ in 0..200 {
        let params = random_params(&mut r, &spec, 3, 1.0);
        let z: Vec<f64> = (0..3).map(|_| r.random_range(-50.0..50.0)).collect();
        let pi = class_membership_probs(&params, &z, &spec).unwrap();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let logits = params.membership_logits(&z);
        let lse = log_sum_exp(&logits);
        for (p, l) in pi.iter().zip(&logits) {
            assert!((p - (l - lse).exp()).abs() < 1e-15);
        }
    }
}

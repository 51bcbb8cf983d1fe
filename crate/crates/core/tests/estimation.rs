mod common;

use common::{cnorm10, probit3, random_dataset, rng, subject};
use lcga::estimation::closed_form_start;
use lcga::simulate::ScenarioConfig;
use lcga::{
    categorize, direct_fit, em_fit, fit_one_class, generate_starts, mixture_loglik, multi_start_fit, posterior_probs,
    Backend, CategoryMap, Convergence, Family, FitConfig, FitResult, FitStatus, LongitudinalDataset, ModelSpec,
};

fn assert_monotone(fit: &FitResult) {
    for w in fit.loglik_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-10, "log-likelihood fell from {} to {}", w[0], w[1]);
    }
}

/// Scores 3..=7 in equal proportion at every period.
fn symmetric_cnorm_data() -> LongitudinalDataset {
    let subjects = (0..50)
        .map(|i| {
            let times: Vec<u32> = (1..=5).collect();
            let scores = times.iter().map(|&t| 3 + ((i + t as usize) % 5) as i32).collect();
            subject(i, times, scores, vec![])
        })
        .collect();
    LongitudinalDataset::new(subjects, 5, (0, 10)).unwrap()
}

fn scenario1_probit(seed: u64) -> LongitudinalDataset {
    let cfg = ScenarioConfig::scenario1().with_counts([300, 100, 100]).with_seed(seed);
    categorize(&lcga::simulate::simulate(&cfg).unwrap(), &CategoryMap::default()).unwrap()
}

#[test]
fn one_class_cnorm_centres_on_symmetric_scores() {
    let data = symmetric_cnorm_data();
    let fit = fit_one_class(&cnorm10(1, 2, false), &data, &FitConfig::default()).unwrap();
    assert_eq!(fit.status, FitStatus::Converged);
    let b = &fit.params.trajectory[0];
    assert!((b[0] - 5.0).abs() < 1e-3, "constant {}", b[0]);
    assert!(b[1].abs() < 1e-3 && b[2].abs() < 1e-3, "slopes {b:?}");
    // interior-only data: σ̂² is the mean squared deviation, here (4+1+0+1+4)/5
    assert!((fit.params.sigma().unwrap() - 2f64.sqrt()).abs() < 1e-4);
}

#[test]
fn one_class_probit_balanced_binary_threshold_is_zero() {
    let subjects = (0..40)
        .map(|i| {
            let times: Vec<u32> = (1..=4).collect();
            let scores = times.iter().map(|&t| 1 + ((i + t as usize) % 2) as i32).collect();
            subject(i, times, scores, vec![])
        })
        .collect();
    let data = LongitudinalDataset::new(subjects, 4, (1, 2)).unwrap();
    let spec = ModelSpec::new(Family::CumulativeProbit { n_categories: 2 }, 1, 0, false).unwrap();
    let fit = fit_one_class(&spec, &data, &FitConfig::default()).unwrap();
    assert_eq!(fit.status, FitStatus::Converged);
    let eta = fit.params.thresholds().unwrap();
    assert!((eta[0] - fit.params.trajectory[0][0]).abs() < 1e-3);
    assert!(eta[0].abs() < 1e-3);
}

#[test]
fn one_class_degenerate_boundary_data_is_false_convergence() {
    let subjects = (0..10)
        .map(|i| subject(i, vec![1, 2, 3], vec![0, 0, 0], vec![]))
        .collect();
    let data = LongitudinalDataset::new(subjects, 3, (0, 10)).unwrap();
    let fit = fit_one_class(&cnorm10(1, 1, false), &data, &FitConfig::default()).unwrap();
    assert_eq!(fit.status, FitStatus::FalseConvergence);
    assert!(fit.message.is_some());
}

#[test]
fn one_class_fit_is_bit_identical_on_refit() {
    let data = random_dataset(&mut rng(3), 60, 6, (0, 10), 0);
    let spec = cnorm10(1, 2, false);
    let a = fit_one_class(&spec, &data, &FitConfig::default()).unwrap();
    let b = fit_one_class(&spec, &data, &FitConfig::default()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
}

#[test]
fn zero_noise_starts_differ_only_in_constants() {
    let data = random_dataset(&mut rng(4), 80, 6, (0, 10), 0);
    let spec = cnorm10(3, 2, false);
    let config = FitConfig {
        n_starts: 1,
        perturbation_scale: 0.0,
        ..FitConfig::default()
    };
    let one = fit_one_class(&spec.with_classes(1), &data, &config).unwrap();
    let starts = generate_starts(&one, &spec, &data, &config, &mut rng(0));
    assert_eq!(starts.len(), 1);
    let rows = &starts[0].trajectory;
    for row in rows {
        assert_eq!(&row[1..], &one.params.trajectory[0][1..]);
    }
    assert!(rows[0][0] < rows[1][0] && rows[1][0] < rows[2][0]);
    assert!(starts[0].membership_intercepts.iter().all(|&t| t == 0.0));
}

#[test]
fn start_lists_depend_only_on_the_seed() {
    let data = random_dataset(&mut rng(5), 80, 6, (0, 10), 0);
    let spec = cnorm10(3, 1, false);
    let config = FitConfig::default();
    let one = fit_one_class(&spec.with_classes(1), &data, &config).unwrap();
    let a = generate_starts(&one, &spec, &data, &config, &mut rng(11));
    let b = generate_starts(&one, &spec, &data, &config, &mut rng(11));
    let c = generate_starts(&one, &spec, &data, &config, &mut rng(12));
    assert_eq!(a.len(), config.n_starts);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn three_class_constants_sit_at_quartiles_of_uniform_scores() {
    // one observation of every score 0..=10
    let subjects = (0..11).map(|i| subject(i, vec![1], vec![i as i32], vec![])).collect();
    let data = LongitudinalDataset::new(subjects, 1, (0, 10)).unwrap();
    let spec = cnorm10(3, 0, false);
    let config = FitConfig {
        n_starts: 1,
        perturbation_scale: 0.0,
        ..FitConfig::default()
    };
    let one = fit_one_class(&spec.with_classes(1), &data, &config).unwrap();
    let start = &generate_starts(&one, &spec, &data, &config, &mut rng(0))[0];
    for (row, target) in start.trajectory.iter().zip([2.5, 5.0, 7.5]) {
        assert!((row[0] - target).abs() < 0.05, "constant {} vs {target}", row[0]);
    }
}

#[test]
fn em_restarted_at_its_fixed_point_stops_immediately() {
    let data = random_dataset(&mut rng(6), 50, 5, (1, 3), 0);
    let spec = probit3(2, 1, false);
    let config = FitConfig {
        n_starts: 5,
        ..FitConfig::default()
    };
    let fit = multi_start_fit(&spec, &data, &config).unwrap();
    assert_eq!(fit.status, FitStatus::Converged);
    let again = em_fit(&spec, &data, &fit.params, &config).unwrap();
    assert!(again.n_iter <= 2, "took {} iterations", again.n_iter);
    assert!(again.detail.param_delta < 1e-4, "moved {}", again.detail.param_delta);
    assert!((again.loglik - fit.loglik).abs() < 1e-8);
}

#[test]
fn em_is_monotone_from_twenty_starts() {
    for (spec, bounds) in [(cnorm10(2, 1, true), (0, 10)), (probit3(3, 2, true), (1, 3))] {
        let data = random_dataset(&mut rng(7), 30, 5, bounds, 1);
        let config = FitConfig::default();
        let one = fit_one_class(&spec.with_classes(1), &data, &config).unwrap();
        for start in generate_starts(&one, &spec, &data, &config, &mut rng(8)) {
            let fit = em_fit(&spec, &data, &start, &config).unwrap();
            assert!(fit.loglik.is_finite());
            assert_monotone(&fit);
        }
    }
}

#[test]
fn direct_solves_two_parameter_probit_quickly() {
    let data = random_dataset(&mut rng(9), 40, 4, (1, 3), 0);
    let spec = probit3(1, 0, false);
    assert_eq!(spec.layout(0).len(), 2);
    let start = closed_form_start(&spec, &data);
    let mut shifted = start.clone();
    if let lcga::Measurement::CumulativeProbit { raw_thresholds } = &mut shifted.measurement {
        raw_thresholds[0] += 1.5;
        raw_thresholds[1] -= 0.7;
    }
    let fit = direct_fit(&spec, &data, &shifted, &FitConfig::default()).unwrap();
    assert_eq!(fit.status, FitStatus::Converged);
    assert!(fit.n_iter <= 25, "took {} iterations", fit.n_iter);
    assert_monotone(&fit);
}

#[test]
fn direct_damping_returns_to_floor() {
    let data = random_dataset(&mut rng(10), 40, 5, (0, 10), 0);
    let spec = cnorm10(1, 2, false);
    let mut start = closed_form_start(&spec, &data);
    start.trajectory[0] = vec![0.5, 9.0, -7.0];
    start.measurement = lcga::Measurement::CensoredNormal { sigma: 6.0 };
    // unreachable tolerances keep the optimizer stepping after it has settled
    let config = FitConfig {
        max_iter: 40,
        convergence: Convergence::Triple {
            tol_param: 1e-300,
            tol_ll: 1e-300,
            tol_grad: 1e-300,
        },
        ..FitConfig::default()
    };
    let fit = direct_fit(&spec, &data, &start, &config).unwrap();
    assert_eq!(fit.status, FitStatus::MaxIterations);
    assert_eq!(fit.final_damping, Some(1e-9));
    assert_monotone(&fit);
}

#[test]
fn em_and_direct_agree_on_small_instance() {
    let cfg = ScenarioConfig::scenario1().with_counts([30, 10, 10]).with_seed(21);
    let data = categorize(&lcga::simulate::simulate(&cfg).unwrap(), &CategoryMap::default()).unwrap();
    let spec = probit3(2, 1, false);
    let em = multi_start_fit(&spec, &data, &FitConfig::default()).unwrap();
    let direct = multi_start_fit(
        &spec,
        &data,
        &FitConfig {
            mode: Backend::Direct,
            ..FitConfig::default()
        },
    )
    .unwrap();
    assert_eq!(em.status, FitStatus::Converged);
    assert_eq!(direct.status, FitStatus::Converged);
    assert!(
        (em.loglik - direct.loglik).abs() <= 1e-3,
        "{} vs {}",
        em.loglik,
        direct.loglik
    );
    // polishing the EM optimum with the direct backend moves it by less than 1e-4
    let polished = direct_fit(&spec, &data, &em.params, &FitConfig::default()).unwrap();
    assert!((polished.loglik - em.loglik).abs() <= 1e-4);
}

#[test]
fn triple_mode_converges_to_the_same_point() {
    let data = random_dataset(&mut rng(12), 40, 5, (1, 3), 0);
    let spec = probit3(2, 1, false);
    let loose = multi_start_fit(
        &spec,
        &data,
        &FitConfig {
            n_starts: 4,
            ..FitConfig::default()
        },
    )
    .unwrap();
    let strict = multi_start_fit(
        &spec,
        &data,
        &FitConfig {
            n_starts: 4,
            convergence: Convergence::triple(),
            max_iter: 5000,
            ..FitConfig::default()
        },
    )
    .unwrap();
    assert_eq!(strict.status, FitStatus::Converged);
    assert!(strict.detail.param_ok == Some(true) && strict.detail.grad_ok == Some(true));
    assert!(strict.loglik >= loose.loglik - 1e-6);
}

#[test]
fn single_start_matches_a_direct_backend_call() {
    let data = random_dataset(&mut rng(13), 40, 5, (0, 10), 1);
    let spec = cnorm10(2, 1, true);
    let config = FitConfig {
        n_starts: 1,
        seed: 4,
        ..FitConfig::default()
    };
    let multi = multi_start_fit(&spec, &data, &config).unwrap();
    let one = fit_one_class(&spec.with_classes(1), &data, &config).unwrap();
    let start = &generate_starts(&one, &spec, &data, &config, &mut rng(4))[0];
    let single = em_fit(&spec, &data, start, &config).unwrap();
    assert_eq!(multi.params, single.params);
    assert_eq!(multi.loglik.to_bits(), single.loglik.to_bits());
    assert_eq!(multi.start_index_of_best, 0);
}

#[test]
fn label_permuted_starts_reach_the_same_loglik() {
    let data = random_dataset(&mut rng(14), 40, 5, (1, 3), 1);
    let spec = probit3(3, 1, true);
    let config = FitConfig::default();
    let one = fit_one_class(&spec.with_classes(1), &data, &config).unwrap();
    let start = generate_starts(&one, &spec, &data, &config, &mut rng(15)).remove(0);
    let base = em_fit(&spec, &data, &start, &config).unwrap();
    for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
        let permuted = start.permute_classes(&perm);
        let before = mixture_loglik(&spec, &permuted, &data).unwrap();
        assert!((before - mixture_loglik(&spec, &start, &data).unwrap()).abs() < 1e-10);
        let fit = em_fit(&spec, &data, &permuted, &config).unwrap();
        assert!(
            (fit.loglik - base.loglik).abs() < 1e-6,
            "{} vs {}",
            fit.loglik,
            base.loglik
        );
    }
}

#[test]
fn multi_start_fit_is_deterministic() {
    let data = random_dataset(&mut rng(16), 40, 5, (1, 3), 1);
    let spec = probit3(2, 1, true);
    let config = FitConfig {
        n_starts: 6,
        seed: 9,
        ..FitConfig::default()
    };
    let a = multi_start_fit(&spec, &data, &config).unwrap();
    let b = multi_start_fit(&spec, &data, &config).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.starts, b.starts);
    assert_eq!(a.loglik_trace, b.loglik_trace);
}

#[test]
fn scenario1_three_class_fit_recovers_proportions_and_is_stable_across_starts() {
    let data = scenario1_probit(0);
    let spec = probit3(3, 2, true);
    let fit = multi_start_fit(&spec, &data, &FitConfig::default()).unwrap();
    assert_eq!(fit.status, FitStatus::Converged);
    assert_monotone(&fit);
    let near = fit
        .starts
        .iter()
        .filter(|s| (s.loglik - fit.loglik).abs() <= 1e-3)
        .count();
    assert!(near >= 18, "{near} of 20 starts reached the best log-likelihood");

    let post = posterior_probs(&fit, &spec, &data).unwrap();
    let mut shares = [0.0; 3];
    for &k in &post.modal {
        shares[k] += 1.0 / data.n_subjects() as f64;
    }
    shares.sort_by(f64::total_cmp);
    for (share, target) in shares.iter().zip([0.2, 0.2, 0.6]) {
        assert!((share - target).abs() <= 0.05, "shares {shares:?}");
    }
}

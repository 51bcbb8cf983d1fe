#![allow(dead_code)]

use lcga::model::thresholds_to_raw;
use lcga::{Family, LongitudinalDataset, Measurement, ModelSpec, ParameterSet, SubjectRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn subject(id: usize, times: Vec<u32>, scores: Vec<i32>, z: Vec<f64>) -> SubjectRecord {
    SubjectRecord {
        subject_id: id.to_string(),
        times,
        scores,
        covariates: z,
        true_class: None,
    }
}

/// Random dataset with every period observed.
pub fn random_dataset(
    rng: &mut impl Rng,
    n: usize,
    periods: u32,
    bounds: (i32, i32),
    covariate_dim: usize,
) -> LongitudinalDataset {
    let subjects = (0..n)
        .map(|i| {
            let times: Vec<u32> = (1..=periods).collect();
            let scores = times.iter().map(|_| rng.random_range(bounds.0..=bounds.1)).collect();
            let z = (0..covariate_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            subject(i, times, scores, z)
        })
        .collect();
    LongitudinalDataset::new(subjects, periods, bounds).unwrap()
}

pub fn random_params(rng: &mut impl Rng, spec: &ModelSpec, covariate_dim: usize, time_scale: f64) -> ParameterSet {
    let k = spec.n_classes;
    let p = if spec.membership_covariates { covariate_dim } else { 0 };
    let mut trajectory: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..=spec.poly_order).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let measurement = match spec.family {
        Family::CensoredNormal { min, max } => {
            for row in &mut trajectory {
                row[0] = rng.random_range(min as f64..max as f64);
            }
            Measurement::CensoredNormal {
                sigma: rng.random_range(0.8..3.0),
            }
        }
        Family::CumulativeProbit { n_categories } => {
            trajectory[0][0] = 0.0;
            let mut eta = vec![rng.random_range(-1.0..0.0)];
            for _ in 1..n_categories - 1 {
                let last = *eta.last().unwrap();
                eta.push(last + rng.random_range(0.3..1.5));
            }
            Measurement::CumulativeProbit {
                raw_thresholds: thresholds_to_raw(&eta).unwrap(),
            }
        }
    };
    ParameterSet {
        membership_intercepts: (0..k - 1).map(|_| rng.random_range(-1.0..1.0)).collect(),
        membership_slopes: if p > 0 {
            (0..k - 1)
                .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        } else {
            Vec::new()
        },
        trajectory,
        measurement,
        time_scale,
    }
}

pub fn probit3(k: usize, d: usize, covariates: bool) -> ModelSpec {
    ModelSpec::new(Family::CumulativeProbit { n_categories: 3 }, k, d, covariates).unwrap()
}

pub fn cnorm10(k: usize, d: usize, covariates: bool) -> ModelSpec {
    ModelSpec::new(Family::CensoredNormal { min: 0, max: 10 }, k, d, covariates).unwrap()
}

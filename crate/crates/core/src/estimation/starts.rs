use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::LongitudinalDataset;
use crate::estimation::{FitConfig, FitResult};
use crate::model::{thresholds_to_raw, Family, Measurement, ModelSpec, ParameterSet};
use crate::normal;

/// Moment-based single-class start: a flat trajectory at the mean score and
/// the sample standard deviation, or probit cut points at the normal
/// quantiles of the cumulative category proportions.
pub fn closed_form_start(spec: &ModelSpec, data: &LongitudinalDataset) -> ParameterSet {
    let time_scale = data.max_time() as f64;
    let n_coeffs = spec.poly_order + 1;
    let scores: Vec<f64> = data.all_scores().map(f64::from).collect();
    let n = scores.len() as f64;
    match spec.family {
        Family::CensoredNormal { .. } => {
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
            let mut coeffs = vec![0.0; n_coeffs];
            coeffs[0] = mean;
            ParameterSet::single_class(
                coeffs,
                Measurement::CensoredNormal {
                    sigma: var.sqrt().max(0.5),
                },
                time_scale,
            )
        }
        Family::CumulativeProbit { n_categories } => {
            let mut counts = vec![0.0; n_categories];
            for s in data.all_scores() {
                counts[(s - 1) as usize] += 1.0;
            }
            let mut eta = Vec::with_capacity(n_categories - 1);
            let mut cumulative = 0.0;
            for &c in &counts[..n_categories - 1] {
                cumulative += c / n;
                let mut cut = normal::quantile(cumulative.clamp(1e-4, 1.0 - 1e-4));
                if let Some(&prev) = eta.last() {
                    cut = f64::max(cut, prev + 1e-3);
                }
                eta.push(cut);
            }
            ParameterSet::single_class(
                vec![0.0; n_coeffs],
                Measurement::CumulativeProbit {
                    raw_thresholds: thresholds_to_raw(&eta).expect("increasing by construction"),
                },
                time_scale,
            )
        }
    }
}

/// Linear-interpolation quantile of sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Expands a single-class fit into `config.n_starts` K-class starts.
///
/// Every class copies the single-class trajectory with its level moved to
/// an equally spaced quantile (of the observed scores, or of the latent
/// normal scale for the probit family), then each coefficient receives
/// Gaussian noise with standard deviation
/// `perturbation_scale * max(|coefficient|, 0.1)`. Membership starts
/// uniform.
pub fn generate_starts<R: Rng + ?Sized>(
    one_class: &FitResult,
    spec: &ModelSpec,
    data: &LongitudinalDataset,
    config: &FitConfig,
    rng: &mut R,
) -> Vec<ParameterSet> {
    let k_n = spec.n_classes;
    let base = &one_class.params.trajectory[0];
    let mut level = 0.0;
    let mut n_obs = 0.0;
    for s in data.subjects() {
        for &t in &s.times {
            level += one_class.params.mean(0, t as f64);
            n_obs += 1.0;
        }
    }
    level /= n_obs;
    let anchors: Vec<f64> = match spec.family {
        Family::CensoredNormal { .. } => {
            let mut sorted: Vec<f64> = data.all_scores().map(f64::from).collect();
            sorted.sort_by(f64::total_cmp);
            (0..k_n)
                .map(|k| quantile_sorted(&sorted, (k + 1) as f64 / (k_n + 1) as f64))
                .collect()
        }
        Family::CumulativeProbit { .. } => {
            let eta = one_class.params.thresholds().expect("probit thresholds");
            let spread = 1.0 + (eta[eta.len() - 1] - eta[0]) / 2.0;
            (0..k_n)
                .map(|k| level + spread * normal::quantile((k + 1) as f64 / (k_n + 1) as f64))
                .collect()
        }
    };
    let p = if spec.membership_covariates {
        data.covariate_dim()
    } else {
        0
    };
    (0..config.n_starts)
        .map(|_| {
            let mut trajectory: Vec<Vec<f64>> = anchors
                .iter()
                .map(|&anchor| {
                    let mut row = base.clone();
                    row[0] += anchor - level;
                    row
                })
                .collect();
            for row in &mut trajectory {
                for (m, b) in row.iter_mut().enumerate() {
                    let sd = config.perturbation_scale * base[m].abs().max(0.1);
                    let noise: f64 = rng.sample(StandardNormal);
                    *b += sd * noise;
                }
            }
            let mut measurement = one_class.params.measurement.clone();
            if let Measurement::CumulativeProbit { raw_thresholds } = &mut measurement {
                let shift = trajectory[0][0];
                for row in &mut trajectory {
                    row[0] -= shift;
                }
                raw_thresholds[0] -= shift;
            }
            ParameterSet {
                membership_intercepts: vec![0.0; k_n - 1],
                membership_slopes: if p > 0 { vec![vec![0.0; p]; k_n - 1] } else { Vec::new() },
                trajectory,
                measurement,
                time_scale: one_class.params.time_scale,
            }
        })
        .collect()
}

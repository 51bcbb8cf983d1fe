//! Per-observation, per-series and mixture log-likelihoods.

use crate::data::{LongitudinalDataset, SubjectRecord};
use crate::engine::Prepared;
use crate::error::{LcgaError, Result};
use crate::model::{raw_to_thresholds, Family, Measurement, ModelSpec, ParameterSet};
use crate::normal;

/// Numerically stable `ln Σ exp(xᵢ)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of `logits` in place; returns the log normaliser.
pub(crate) fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let lse = log_sum_exp(logits);
    for v in logits.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// Generalized-logit class membership probabilities for covariates `z`.
pub fn class_membership_probs(params: &ParameterSet, z: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    let k = spec.n_classes;
    if params.n_classes() != k {
        return Err(LcgaError::Dimension {
            field: "trajectory",
            expected: k,
            found: params.n_classes(),
        });
    }
    if params.membership_intercepts.len() != k - 1 {
        return Err(LcgaError::Dimension {
            field: "membership_intercepts",
            expected: k - 1,
            found: params.membership_intercepts.len(),
        });
    }
    if spec.membership_covariates {
        if params.membership_slopes.len() != k - 1 {
            return Err(LcgaError::Dimension {
                field: "membership_slopes",
                expected: k - 1,
                found: params.membership_slopes.len(),
            });
        }
        if let Some(row) = params.membership_slopes.iter().find(|r| r.len() != z.len()) {
            return Err(LcgaError::Dimension {
                field: "z",
                expected: row.len(),
                found: z.len(),
            });
        }
    }
    let mut logits = if spec.membership_covariates {
        params.membership_logits(z)
    } else {
        params.membership_logits(&[])
    };
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Censored-normal log-likelihood of one bounded score.
pub fn cnorm_obs_loglik(y: i32, mu: f64, sigma: f64, min: i32, max: i32) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(LcgaError::Domain(format!("sigma = {sigma} must be positive")));
    }
    if y < min || y > max {
        return Err(LcgaError::Data(format!("score {y} outside [{min}, {max}]")));
    }
    Ok(cnorm_terms(y, mu, sigma, min, max).0)
}

/// `(log p, ∂/∂μ, ∂/∂ln σ)` for one censored-normal observation.
pub(crate) fn cnorm_terms(y: i32, mu: f64, sigma: f64, min: i32, max: i32) -> (f64, f64, f64) {
    if y <= min {
        let z = (min as f64 - mu) / sigma;
        let r = normal::mills(z);
        (normal::log_cdf(z), -r / sigma, -r * z)
    } else if y >= max {
        let u = (mu - max as f64) / sigma;
        let r = normal::mills(u);
        (normal::log_cdf(u), r / sigma, -r * u)
    } else {
        let z = (y as f64 - mu) / sigma;
        (normal::log_pdf(z) - sigma.ln(), z / sigma, z * z - 1.0)
    }
}

/// Category probabilities `Φ(η_l − μ) − Φ(η_{l−1} − μ)`, `l = 1..=M`.
pub fn probit_category_probs(eta: &[f64], mu: f64) -> Result<Vec<f64>> {
    if eta.is_empty() {
        return Err(LcgaError::Domain("at least one threshold is required".into()));
    }
    if eta.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LcgaError::Domain("thresholds must be strictly increasing".into()));
    }
    let m = eta.len() + 1;
    Ok((1..=m)
        .map(|c| {
            let (lo, hi) = category_interval(eta, c, mu);
            normal::log_interval(lo, hi).exp()
        })
        .collect())
}

fn category_interval(eta: &[f64], category: usize, mu: f64) -> (f64, f64) {
    let lo = if category == 1 {
        f64::NEG_INFINITY
    } else {
        eta[category - 2] - mu
    };
    let hi = if category == eta.len() + 1 {
        f64::INFINITY
    } else {
        eta[category - 1] - mu
    };
    (lo, hi)
}

/// `log P(category | μ)` under the cumulative probit.
pub(crate) fn probit_obs_loglik(eta: &[f64], category: usize, mu: f64) -> f64 {
    let (lo, hi) = category_interval(eta, category, mu);
    normal::log_interval(lo, hi)
}

/// `log P(category | μ)` together with `∂/∂μ`, and the two nonzero
/// threshold derivatives `(∂/∂η_{c-1}, ∂/∂η_c)`.
pub(crate) fn probit_terms(eta: &[f64], category: usize, mu: f64) -> (f64, f64, f64, f64) {
    let (lo, hi) = category_interval(eta, category, mu);
    let lp = normal::log_interval(lo, hi);
    if lp <= normal::LOG_PROB_FLOOR {
        return (lp, 0.0, 0.0, 0.0);
    }
    let d_hi = if hi.is_finite() {
        (normal::log_pdf(hi) - lp).exp()
    } else {
        0.0
    };
    let d_lo = if lo.is_finite() {
        -(normal::log_pdf(lo) - lp).exp()
    } else {
        0.0
    };
    (lp, -(d_hi + d_lo), d_lo, d_hi)
}

/// Second-order terms of one censored-normal observation in `(μ, ln σ)`:
/// `(∂²/∂μ², ∂²/∂μ∂ln σ, ∂²/∂(ln σ)²)`.
pub(crate) fn cnorm_curvature(y: i32, mu: f64, sigma: f64, min: i32, max: i32) -> (f64, f64, f64) {
    if y <= min || y >= max {
        // lp = ln Φ(u) with u = (min - μ)/σ or (μ - max)/σ
        let (u, sign) = if y <= min {
            ((min as f64 - mu) / sigma, -1.0)
        } else {
            ((mu - max as f64) / sigma, 1.0)
        };
        let r = normal::mills(u);
        let curv = -u * r - r * r;
        let mumu = curv / (sigma * sigma);
        let mus = sign * (-(curv * u) - r) / sigma;
        let ss = curv * u * u + r * u;
        (mumu, mus, ss)
    } else {
        let z = (y as f64 - mu) / sigma;
        (-1.0 / (sigma * sigma), -2.0 * z / sigma, -2.0 * z * z)
    }
}

/// Curvature of `ln(Φ(b) − Φ(a))` in its endpoints, `(∂²/∂a², ∂²/∂b², ∂²/∂a∂b)`,
/// given the first derivatives `r_a`, `r_b` returned by [`probit_terms`].
pub(crate) fn probit_curvature(eta: &[f64], category: usize, mu: f64, r_a: f64, r_b: f64) -> (f64, f64, f64) {
    let (lo, hi) = category_interval(eta, category, mu);
    let haa = if lo.is_finite() { -lo * r_a - r_a * r_a } else { 0.0 };
    let hbb = if hi.is_finite() { -hi * r_b - r_b * r_b } else { 0.0 };
    (haa, hbb, -r_a * r_b)
}

/// Log-likelihood of one observation under `spec.family`.
pub(crate) fn obs_loglik(family: &Family, measurement: &Measurement, eta: &[f64], y: i32, mu: f64) -> f64 {
    match (family, measurement) {
        (Family::CensoredNormal { min, max }, Measurement::CensoredNormal { sigma }) => {
            cnorm_terms(y, mu, *sigma, *min, *max).0
        }
        (Family::CumulativeProbit { .. }, Measurement::CumulativeProbit { .. }) => probit_terms(eta, y as usize, mu).0,
        _ => f64::NAN,
    }
}

/// Sum of per-observation log-likelihoods of `subject` under class `k`.
pub fn series_loglik_given_class(spec: &ModelSpec, params: &ParameterSet, subject: &SubjectRecord, k: usize) -> f64 {
    assert!(k < spec.n_classes, "class index {k} out of range");
    let eta = match &params.measurement {
        Measurement::CumulativeProbit { raw_thresholds } => raw_to_thresholds(raw_thresholds),
        Measurement::CensoredNormal { .. } => Vec::new(),
    };
    subject
        .times
        .iter()
        .zip(&subject.scores)
        .map(|(&t, &y)| obs_loglik(&spec.family, &params.measurement, &eta, y, params.mean(k, t as f64)))
        .sum()
}

fn check_consistent(spec: &ModelSpec, params: &ParameterSet, data: &LongitudinalDataset) -> Result<()> {
    spec.validate()?;
    params.validate(spec, data.covariate_dim())?;
    let (lo, hi) = spec.family.outcome_range();
    let (dlo, dhi) = data.score_bounds();
    if dlo < lo || dhi > hi {
        return Err(LcgaError::Data(format!(
            "data score bounds [{dlo}, {dhi}] exceed the {} outcome range [{lo}, {hi}]",
            spec.family.label()
        )));
    }
    Ok(())
}

/// Observed-data log-likelihood `Σᵢ ln Σₖ πₖ(zᵢ) Pr(yᵢ | class k)`.
pub fn mixture_loglik(spec: &ModelSpec, params: &ParameterSet, data: &LongitudinalDataset) -> Result<f64> {
    check_consistent(spec, params, data)?;
    let mut total = 0.0;
    let mut terms = vec![0.0; spec.n_classes];
    for (i, subject) in data.subjects().iter().enumerate() {
        let pi = class_membership_probs(params, &subject.covariates, spec)?;
        for (k, term) in terms.iter_mut().enumerate() {
            *term = pi[k].ln() + series_loglik_given_class(spec, params, subject, k);
        }
        let li = log_sum_exp(&terms);
        if !li.is_finite() {
            return Err(LcgaError::NonFinite { subject: i });
        }
        total += li;
    }
    Ok(total)
}

/// Analytic gradient of [`mixture_loglik`] in the flat unconstrained layout
/// (`ln σ` for the censored normal, raw thresholds for the probit).
pub fn mixture_loglik_grad(spec: &ModelSpec, params: &ParameterSet, data: &LongitudinalDataset) -> Result<Vec<f64>> {
    check_consistent(spec, params, data)?;
    let prepared = Prepared::new(spec, data, params.time_scale);
    let state = prepared.e_step(params);
    if let Some(subject) = state.non_finite_subject {
        return Err(LcgaError::NonFinite { subject });
    }
    Ok(prepared.full_gradient(params, &state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::thresholds_to_raw;

    fn subject(times: Vec<u32>, scores: Vec<i32>, z: Vec<f64>) -> SubjectRecord {
        SubjectRecord {
            subject_id: "s".into(),
            times,
            scores,
            covariates: z,
            true_class: None,
        }
    }

    fn two_class(theta: f64) -> (ModelSpec, ParameterSet) {
        let spec = ModelSpec::new(Family::CumulativeProbit { n_categories: 3 }, 2, 0, false).unwrap();
        let params = ParameterSet {
            membership_intercepts: vec![theta],
            membership_slopes: vec![],
            trajectory: vec![vec![0.0], vec![1.0]],
            measurement: Measurement::CumulativeProbit {
                raw_thresholds: thresholds_to_raw(&[0.0, 1.0]).unwrap(),
            },
            time_scale: 2.0,
        };
        (spec, params)
    }

    #[test]
    fn membership_single_class_is_one() {
        let spec = ModelSpec::new(Family::CensoredNormal { min: 0, max: 10 }, 1, 0, true).unwrap();
        let params = ParameterSet::single_class(vec![1.0], Measurement::CensoredNormal { sigma: 1.0 }, 1.0);
        assert_eq!(class_membership_probs(&params, &[3.0, 4.0], &spec).unwrap(), vec![1.0]);
    }

    #[test]
    fn membership_symmetric_and_log_two() {
        let (spec, params) = two_class(0.0);
        assert_eq!(class_membership_probs(&params, &[], &spec).unwrap(), vec![0.5, 0.5]);
        let (spec, params) = two_class(2f64.ln());
        let pi = class_membership_probs(&params, &[], &spec).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn membership_overflow_safe() {
        let (spec, params) = two_class(1e4);
        let pi = class_membership_probs(&params, &[], &spec).unwrap();
        assert_eq!(pi, vec![1.0, 0.0]);
    }

    #[test]
    fn membership_dimension_error_names_field() {
        let spec = ModelSpec::new(Family::CumulativeProbit { n_categories: 3 }, 2, 0, true).unwrap();
        let params = ParameterSet {
            membership_intercepts: vec![0.0],
            membership_slopes: vec![vec![1.0, 2.0]],
            trajectory: vec![vec![0.0], vec![1.0]],
            measurement: Measurement::CumulativeProbit {
                raw_thresholds: vec![0.0, 0.0],
            },
            time_scale: 1.0,
        };
        let err = class_membership_probs(&params, &[1.0], &spec).unwrap_err();
        assert!(matches!(
            err,
            LcgaError::Dimension {
                field: "z",
                expected: 2,
                found: 1
            }
        ));
    }

    #[test]
    fn cnorm_examples() {
        let v = cnorm_obs_loglik(0, 0.0, 1.0, 0, 10).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
        let v = cnorm_obs_loglik(5, 5.0, 2.0, 0, 10).unwrap();
        assert!((v - (-1.612_085_713_764_618)).abs() < 1e-9, "{v}");
        let v = cnorm_obs_loglik(10, 10.0, 1.0, 0, 10).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            cnorm_obs_loglik(1, 0.0, 0.0, 0, 10),
            Err(LcgaError::Domain(_))
        ));
        assert!(cnorm_obs_loglik(11, 0.0, 1.0, 0, 10).is_err());
    }

    #[test]
    fn cnorm_lower_endpoint_limits() {
        let mut last = f64::NEG_INFINITY;
        for mu in [8.0, 4.0, 0.0, -4.0, -8.0, -40.0] {
            let v = cnorm_obs_loglik(0, mu, 1.0, 0, 10).unwrap();
            assert!(v > last, "not decreasing in mu at y=min");
            last = v;
        }
        assert!(last.abs() < 1e-15);
    }

    #[test]
    fn probit_examples() {
        let p = probit_category_probs(&[0.0, 1.0], 0.0).unwrap();
        let expected = [0.5, 0.341_344_746_068_542_9, 0.158_655_253_931_457_05];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(probit_category_probs(&[0.0], 0.0).unwrap(), vec![0.5, 0.5]);
        let top = probit_category_probs(&[0.0, 1.0], 20.0).unwrap();
        assert!(top[0] < 1e-80 && top[1] < 1e-60 && (top[2] - 1.0).abs() < 1e-15);
        assert!(matches!(
            probit_category_probs(&[1.0, 0.0], 0.0),
            Err(LcgaError::Domain(_))
        ));
    }

    #[test]
    fn series_single_observation_equals_obs_term() {
        let spec = ModelSpec::new(Family::CensoredNormal { min: 0, max: 10 }, 1, 1, false).unwrap();
        let params = ParameterSet::single_class(vec![2.0, 3.0], Measurement::CensoredNormal { sigma: 1.5 }, 4.0);
        let s = subject(vec![2], vec![4], vec![]);
        let expected = cnorm_obs_loglik(4, 2.0 + 3.0 * 0.5, 1.5, 0, 10).unwrap();
        assert_eq!(series_loglik_given_class(&spec, &params, &s, 0), expected);
    }

    #[test]
    fn series_two_probit_observations() {
        let (spec, params) = two_class(0.0);
        let s = subject(vec![1, 2], vec![1, 3], vec![]);
        let p = probit_category_probs(&[0.0, 1.0], 1.0).unwrap();
        let manual = p[0].ln() + p[2].ln();
        assert!((series_loglik_given_class(&spec, &params, &s, 1) - manual).abs() < 1e-12);
    }

    #[test]
    fn mixture_single_class_collapses() {
        let spec = ModelSpec::new(Family::CensoredNormal { min: 0, max: 10 }, 1, 0, false).unwrap();
        let params = ParameterSet::single_class(vec![4.0], Measurement::CensoredNormal { sigma: 2.0 }, 3.0);
        let subjects = vec![
            subject(vec![1, 3], vec![0, 6], vec![]),
            subject(vec![2], vec![10], vec![]),
        ];
        let data = LongitudinalDataset::new(subjects, 3, (0, 10)).unwrap();
        let direct: f64 = data
            .subjects()
            .iter()
            .map(|s| series_loglik_given_class(&spec, &params, s, 0))
            .sum();
        assert!((mixture_loglik(&spec, &params, &data).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn mixture_rejects_family_outcome_mismatch() {
        let spec = ModelSpec::new(Family::CumulativeProbit { n_categories: 3 }, 1, 0, false).unwrap();
        let params = ParameterSet::single_class(
            vec![0.0],
            Measurement::CumulativeProbit {
                raw_thresholds: vec![0.0, 0.0],
            },
            1.0,
        );
        let data = LongitudinalDataset::new(vec![subject(vec![1], vec![7], vec![])], 1, (0, 10)).unwrap();
        assert!(matches!(mixture_loglik(&spec, &params, &data), Err(LcgaError::Data(_))));
    }
}

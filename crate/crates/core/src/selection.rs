//! Information criteria, class-count selection, posterior classification
//! and truth-aligned classification rates.

use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{LcgaError, Result};
use crate::estimation::{multi_start_fit, FitConfig, FitResult, FitStatus};
use crate::likelihood::{class_membership_probs, series_loglik_given_class, softmax_in_place};
use crate::model::{ModelSpec, ParameterSet};
use crate::par;

/// 2ΔBIC above this is strong evidence for the richer model.
pub const STRONG_EVIDENCE: f64 = 10.0;

/// `-2 ln L + p ln n`, with `n` the number of independent subjects.
pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n as f64).ln()
}

pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

/// Logged Bayes factor of the richer model over the simpler one.
pub fn bayes_factor_2dbic(bic_simpler: f64, bic_richer: f64) -> f64 {
    2.0 * (bic_simpler - bic_richer)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    MinBic,
    /// Step up while consecutive 2ΔBIC exceeds [`STRONG_EVIDENCE`].
    BayesFactorLadder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub n_classes: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub status: FitStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchOutcome {
    Selected,
    NoConvergedFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Sorted by class count.
    pub rows: Vec<SelectionRow>,
    pub chosen_k: Option<usize>,
    pub rule: SelectionRule,
    pub excluded_k: Vec<usize>,
    pub outcome: SearchOutcome,
    /// Sample size used in BIC.
    pub n_subjects: usize,
    pub n_observations: usize,
    #[serde(skip)]
    pub fits: Vec<FitResult>,
}

impl SelectionReport {
    pub fn fit_for(&self, k: usize) -> Option<&FitResult> {
        self.fits.iter().find(|f| f.spec.n_classes == k)
    }

    pub fn chosen_fit(&self) -> Option<&FitResult> {
        self.chosen_k.and_then(|k| self.fit_for(k))
    }
}

/// Applies `rule` to rows sorted by class count, ignoring non-converged rows.
pub fn choose_k(rows: &[SelectionRow], rule: SelectionRule) -> Option<usize> {
    let mut usable = rows
        .iter()
        .filter(|r| r.status == FitStatus::Converged && r.bic.is_finite());
    match rule {
        SelectionRule::MinBic => usable
            .fold(None, |best: Option<&SelectionRow>, r| match best {
                Some(b) if b.bic <= r.bic => Some(b),
                _ => Some(r),
            })
            .map(|r| r.n_classes),
        SelectionRule::BayesFactorLadder => {
            let mut current = usable.next()?;
            for next in usable {
                if bayes_factor_2dbic(current.bic, next.bic) > STRONG_EVIDENCE {
                    current = next;
                } else {
                    break;
                }
            }
            Some(current.n_classes)
        }
    }
}

/// Fits every class count in `k_min..=k_max` and selects one by `rule`.
pub fn class_search(
    spec_template: &ModelSpec,
    data: &LongitudinalDataset,
    k_min: usize,
    k_max: usize,
    config: &FitConfig,
    rule: SelectionRule,
) -> Result<SelectionReport> {
    if k_min == 0 || k_max < k_min {
        return Err(LcgaError::Config(format!("invalid class range {k_min}..={k_max}")));
    }
    let specs: Vec<ModelSpec> = (k_min..=k_max).map(|k| spec_template.with_classes(k)).collect();
    let fits: Vec<Result<FitResult>> = par::map_indexed(specs.len(), |i| multi_start_fit(&specs[i], data, config));
    let fits: Vec<FitResult> = fits.into_iter().collect::<Result<_>>()?;
    let rows: Vec<SelectionRow> = fits
        .iter()
        .map(|f| SelectionRow {
            n_classes: f.spec.n_classes,
            loglik: f.loglik,
            n_params: f.n_params,
            aic: f.aic(),
            bic: f.bic(),
            status: f.status,
        })
        .collect();
    let excluded_k = rows
        .iter()
        .filter(|r| r.status != FitStatus::Converged)
        .map(|r| r.n_classes)
        .collect();
    let chosen_k = choose_k(&rows, rule);
    Ok(SelectionReport {
        rows,
        chosen_k,
        rule,
        excluded_k,
        outcome: if chosen_k.is_some() {
            SearchOutcome::Selected
        } else {
            SearchOutcome::NoConvergedFit
        },
        n_subjects: data.n_subjects(),
        n_observations: data.n_observations(),
        fits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMatrix {
    pub probs: Vec<Vec<f64>>,
    /// Row argmax, smallest index on ties.
    pub modal: Vec<usize>,
    /// `1 - Σ -p ln p / (n ln K)`; 1 for a single class.
    pub relative_entropy: f64,
}

impl PosteriorMatrix {
    /// Normalises per-subject unnormalised log weights.
    pub fn from_log_weights(rows: Vec<Vec<f64>>) -> Self {
        let mut probs = rows;
        for row in &mut probs {
            softmax_in_place(row);
        }
        let modal = probs
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                    )
                    .0
            })
            .collect();
        let k = probs.first().map_or(1, Vec::len);
        let relative_entropy = if k <= 1 || probs.is_empty() {
            1.0
        } else {
            let ent: f64 = probs.iter().flatten().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
            1.0 - ent / (probs.len() as f64 * (k as f64).ln())
        };
        Self {
            probs,
            modal,
            relative_entropy,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }
}

/// Posterior class probabilities of every subject under `fit`.
pub fn posterior_probs(fit: &FitResult, spec: &ModelSpec, data: &LongitudinalDataset) -> Result<PosteriorMatrix> {
    posterior_from_params(&fit.params, spec, data)
}

/// Posterior class probabilities of every subject under `params`.
pub fn posterior_from_params(
    params: &ParameterSet,
    spec: &ModelSpec,
    data: &LongitudinalDataset,
) -> Result<PosteriorMatrix> {
    params.validate(spec, data.covariate_dim())?;
    let rows = data
        .subjects()
        .iter()
        .map(|s| {
            let pi = class_membership_probs(params, &s.covariates, spec)?;
            Ok((0..spec.n_classes)
                .map(|k| pi[k].ln() + series_loglik_given_class(spec, params, s, k))
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(PosteriorMatrix::from_log_weights(rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRates {
    /// Fraction of each true class modally assigned to its aligned class.
    pub per_class: Vec<f64>,
    pub overall: f64,
    /// `alignment[fitted] = true label`.
    pub alignment: Vec<usize>,
}

pub const MAX_ALIGNMENT_CLASSES: usize = 6;

/// Aligns fitted classes to truth labels by the permutation maximising
/// modal agreement (first permutation in lexicographic order on ties).
pub fn correct_classification_rate(posterior: &PosteriorMatrix, truth: &[usize]) -> Result<ClassificationRates> {
    let k = posterior.n_classes();
    if k > MAX_ALIGNMENT_CLASSES {
        return Err(LcgaError::AlignmentTooLarge(k));
    }
    if truth.len() != posterior.modal.len() {
        return Err(LcgaError::Dimension {
            field: "truth",
            expected: posterior.modal.len(),
            found: truth.len(),
        });
    }
    let n_labels = truth.iter().max().map_or(0, |m| m + 1);
    if n_labels > k {
        return Err(LcgaError::Data(format!(
            "{n_labels} true classes exceed the {k} fitted classes"
        )));
    }
    let mut counts = vec![vec![0usize; k]; k];
    let mut totals = vec![0usize; n_labels];
    for (&fitted, &label) in posterior.modal.iter().zip(truth) {
        counts[fitted][label] += 1;
        totals[label] += 1;
    }
    let mut best: Option<(usize, Vec<usize>)> = None;
    for perm in permutations(k) {
        let score: usize = perm.iter().enumerate().map(|(f, &l)| counts[f][l]).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm));
        }
    }
    let (score, alignment) = best.expect("at least one permutation");
    let per_class = (0..n_labels)
        .map(|label| {
            let fitted = alignment.iter().position(|&l| l == label).expect("bijection");
            if totals[label] == 0 {
                f64::NAN
            } else {
                counts[fitted][label] as f64 / totals[label] as f64
            }
        })
        .collect();
    Ok(ClassificationRates {
        per_class,
        overall: if truth.is_empty() {
            f64::NAN
        } else {
            score as f64 / truth.len() as f64
        },
        alignment,
    })
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n)
            .rev()
            .find(|&j| current[j] > current[i - 1])
            .expect("pivot exists");
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

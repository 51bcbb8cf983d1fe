//! Replicate studies: simulate, fit a grid of models, select the class
//! count and score the classification against the generating groups.

use serde::{Deserialize, Serialize};

use crate::data::CategoryMap;
use crate::error::{LcgaError, Result};
use crate::estimation::{FitConfig, FitStatus};
use crate::model::ModelSpec;
use crate::par;
use crate::selection::{class_search, correct_classification_rate, posterior_probs, SelectionRow, SelectionRule};
use crate::simulate::{categorize, simulate, ScenarioConfig};

/// Studies fail when more than this fraction of replicate cells fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub label: String,
    /// Template; the class count is taken from `k_min..=k_max`.
    pub spec: ModelSpec,
    pub k_min: usize,
    pub k_max: usize,
    pub rule: SelectionRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioConfig,
    pub categorize: Option<CategoryMap>,
    pub grid: Vec<GridCell>,
    pub fit: FitConfig,
    pub replicates: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub cell: usize,
    pub rows: Vec<SelectionRow>,
    pub chosen_k: Option<usize>,
    /// Rates of the fit with the true number of classes, when fitted.
    pub rates: Option<Vec<f64>>,
    pub overall_rate: Option<f64>,
    /// Wall time of each fit, in row order.
    pub fit_seconds: Vec<f64>,
    pub error: Option<String>,
}

impl CellOutcome {
    /// Simulation or fitting raised an error. A search in which no class
    /// count converged is not a failure; it is counted separately.
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub label: String,
    pub n_replicates: usize,
    pub n_failed: usize,
    /// Replicates in which no class count converged.
    pub n_unselected: usize,
    /// `(K, times chosen)` over `k_min..=k_max`.
    pub chosen_counts: Vec<(usize, usize)>,
    /// `(K, mean BIC, mean log-likelihood, converged fits)` over converged fits.
    pub mean_bic: Vec<(usize, f64, f64, usize)>,
    pub mean_rates: Vec<f64>,
    pub mean_overall_rate: f64,
    pub n_scored: usize,
}

impl CellAggregate {
    pub fn chosen_fraction(&self, k: usize) -> f64 {
        let hits = self
            .chosen_counts
            .iter()
            .find(|(kk, _)| *kk == k)
            .map_or(0, |(_, c)| *c);
        hits as f64 / self.n_replicates as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub label: String,
    pub n_classes: usize,
    pub mean_seconds: f64,
    pub max_seconds: f64,
    pub n_fits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub cells: Vec<CellOutcome>,
    pub aggregates: Vec<CellAggregate>,
    pub timing: Vec<TimingRow>,
    pub failure_fraction: f64,
}

impl StudyOutcome {
    pub fn too_many_failures(&self) -> bool {
        self.failure_fraction > MAX_FAILURE_FRACTION
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.fit.validate()?;
        if self.replicates == 0 {
            return Err(LcgaError::Config("replicates must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(LcgaError::Config("model grid is empty".into()));
        }
        for cell in &self.grid {
            cell.spec.validate()?;
            if cell.k_min == 0 || cell.k_max < cell.k_min {
                return Err(LcgaError::Config(format!(
                    "grid cell `{}` has invalid class range {}..={}",
                    cell.label, cell.k_min, cell.k_max
                )));
            }
        }
        Ok(())
    }
}

fn run_replicate(cfg: &StudyConfig, replicate: usize) -> Vec<CellOutcome> {
    let seed = cfg.master_seed.wrapping_add(replicate as u64);
    let blank = |cell: usize, error: String| CellOutcome {
        replicate,
        seed,
        cell,
        rows: Vec::new(),
        chosen_k: None,
        rates: None,
        overall_rate: None,
        fit_seconds: Vec::new(),
        error: Some(error),
    };
    let data = simulate(&cfg.scenario.clone().with_seed(seed)).and_then(|d| match &cfg.categorize {
        Some(map) => categorize(&d, map),
        None => Ok(d),
    });
    let data = match data {
        Ok(d) => d,
        Err(e) => return (0..cfg.grid.len()).map(|c| blank(c, e.to_string())).collect(),
    };
    let truth = data.true_classes().unwrap_or_default();
    let true_k = truth.iter().max().map_or(0, |m| m + 1);
    let fit_config = FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    cfg.grid
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let report = match class_search(&cell.spec, &data, cell.k_min, cell.k_max, &fit_config, cell.rule) {
                Ok(r) => r,
                Err(e) => return blank(c, e.to_string()),
            };
            let scored = report
                .fit_for(true_k)
                .filter(|f| f.status != FitStatus::FalseConvergence)
                .and_then(|f| posterior_probs(f, &f.spec, &data).ok())
                .and_then(|post| correct_classification_rate(&post, &truth).ok());
            CellOutcome {
                replicate,
                seed,
                cell: c,
                fit_seconds: report.fits.iter().map(|f| f.wall_time.as_secs_f64()).collect(),
                rows: report.rows,
                chosen_k: report.chosen_k,
                rates: scored.as_ref().map(|r| r.per_class.clone()),
                overall_rate: scored.map(|r| r.overall),
                error: None,
            }
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Aggregates in replicate order, so the result does not depend on which
/// replicate finished first.
pub fn aggregate(cfg: &StudyConfig, cells: &[CellOutcome]) -> (Vec<CellAggregate>, Vec<TimingRow>) {
    let mut ordered: Vec<&CellOutcome> = cells.iter().collect();
    ordered.sort_by_key(|c| (c.cell, c.replicate));
    let mut aggregates = Vec::new();
    let mut timing = Vec::new();
    for (index, cell) in cfg.grid.iter().enumerate() {
        let outcomes: Vec<&CellOutcome> = ordered.iter().copied().filter(|c| c.cell == index).collect();
        let ks: Vec<usize> = (cell.k_min..=cell.k_max).collect();
        let chosen_counts = ks
            .iter()
            .map(|&k| (k, outcomes.iter().filter(|o| o.chosen_k == Some(k)).count()))
            .collect();
        let rows_for = |k: usize| {
            outcomes
                .iter()
                .flat_map(|o| o.rows.iter())
                .filter(move |r| r.n_classes == k && r.status == FitStatus::Converged)
        };
        let mean_bic = ks
            .iter()
            .map(|&k| {
                (
                    k,
                    mean(rows_for(k).map(|r| r.bic)),
                    mean(rows_for(k).map(|r| r.loglik)),
                    rows_for(k).count(),
                )
            })
            .collect();
        let scored: Vec<&Vec<f64>> = outcomes.iter().filter_map(|o| o.rates.as_ref()).collect();
        let n_labels = scored.iter().map(|r| r.len()).max().unwrap_or(0);
        let mean_rates = (0..n_labels)
            .map(|l| {
                mean(
                    scored
                        .iter()
                        .filter_map(|r| r.get(l).copied())
                        .filter(|v| v.is_finite()),
                )
            })
            .collect();
        aggregates.push(CellAggregate {
            label: cell.label.clone(),
            n_replicates: outcomes.len(),
            n_failed: outcomes.iter().filter(|o| o.failed()).count(),
            n_unselected: outcomes.iter().filter(|o| !o.failed() && o.chosen_k.is_none()).count(),
            chosen_counts,
            mean_bic,
            mean_rates,
            mean_overall_rate: mean(outcomes.iter().filter_map(|o| o.overall_rate)),
            n_scored: scored.len(),
        });
        for (pos, &k) in ks.iter().enumerate() {
            let times: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.fit_seconds.get(pos).copied())
                .collect();
            timing.push(TimingRow {
                label: cell.label.clone(),
                n_classes: k,
                mean_seconds: mean(times.iter().copied()),
                max_seconds: times.iter().copied().fold(0.0, f64::max),
                n_fits: times.len(),
            });
        }
    }
    (aggregates, timing)
}

/// Runs every replicate (seed `master_seed + r`) on an optional dedicated
/// worker pool and aggregates the results.
pub fn run_replicate_study(cfg: &StudyConfig, workers: Option<usize>) -> Result<StudyOutcome> {
    cfg.validate()?;
    let per_replicate = par::with_workers(workers, || par::map_indexed(cfg.replicates, |r| run_replicate(cfg, r)));
    let cells: Vec<CellOutcome> = per_replicate.into_iter().flatten().collect();
    let (aggregates, timing) = aggregate(cfg, &cells);
    let failures = cells.iter().filter(|c| c.failed()).count();
    let failure_fraction = failures as f64 / cells.len() as f64;
    Ok(StudyOutcome {
        cells,
        aggregates,
        timing,
        failure_fraction,
    })
}

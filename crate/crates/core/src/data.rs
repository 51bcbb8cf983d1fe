//! Longitudinal observation containers.

use serde::{Deserialize, Serialize};

use crate::error::{LcgaError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// Observation periods, 1-based and strictly increasing.
    pub times: Vec<u32>,
    pub scores: Vec<i32>,
    /// Baseline covariates.
    pub covariates: Vec<f64>,
    /// Generating class, when known (0-based).
    pub true_class: Option<usize>,
}

impl SubjectRecord {
    pub fn n_obs(&self) -> usize {
        self.times.len()
    }
}

/// Ordered grouping of raw integer scores into categories `1..=M`.
///
/// Category `c` covers the scores in `(upper[c-2], upper[c-1]]`, with the
/// first category starting at `domain_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub domain_min: i32,
    pub upper_bounds: Vec<i32>,
}

impl Default for CategoryMap {
    /// none/mild 0-3, moderate 4-6, severe 7-10.
    fn default() -> Self {
        Self {
            domain_min: 0,
            upper_bounds: vec![3, 6, 10],
        }
    }
}

impl CategoryMap {
    pub fn new(domain_min: i32, upper_bounds: Vec<i32>) -> Result<Self> {
        if upper_bounds.is_empty() {
            return Err(LcgaError::Config("category map needs at least one category".into()));
        }
        if upper_bounds[0] < domain_min {
            return Err(LcgaError::Config(format!(
                "first category bound {} below domain minimum {domain_min}",
                upper_bounds[0]
            )));
        }
        if upper_bounds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LcgaError::Config("category bounds must be strictly increasing".into()));
        }
        Ok(Self {
            domain_min,
            upper_bounds,
        })
    }

    pub fn n_categories(&self) -> usize {
        self.upper_bounds.len()
    }

    pub fn domain_max(&self) -> i32 {
        *self.upper_bounds.last().expect("validated non-empty")
    }

    pub fn category(&self, score: i32) -> Result<i32> {
        if score < self.domain_min || score > self.domain_max() {
            return Err(LcgaError::Data(format!(
                "score {score} outside category map domain [{}, {}]",
                self.domain_min,
                self.domain_max()
            )));
        }
        let idx = self
            .upper_bounds
            .iter()
            .position(|&u| score <= u)
            .expect("within domain");
        Ok(idx as i32 + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    subjects: Vec<SubjectRecord>,
    max_time: u32,
    covariate_dim: usize,
    score_min: i32,
    score_max: i32,
    category_map: Option<CategoryMap>,
}

impl LongitudinalDataset {
    /// Validates every subject against the period range `1..=max_time` and
    /// the score bounds.
    pub fn new(subjects: Vec<SubjectRecord>, max_time: u32, score_bounds: (i32, i32)) -> Result<Self> {
        let (score_min, score_max) = score_bounds;
        if score_min >= score_max {
            return Err(LcgaError::Data(format!(
                "score bounds [{score_min}, {score_max}] are empty or degenerate"
            )));
        }
        if max_time == 0 {
            return Err(LcgaError::Data("max_time must be at least 1".into()));
        }
        if subjects.is_empty() {
            return Err(LcgaError::Data("dataset has no subjects".into()));
        }
        let covariate_dim = subjects[0].covariates.len();
        for s in &subjects {
            if s.times.is_empty() || s.times.len() != s.scores.len() {
                return Err(LcgaError::Data(format!(
                    "subject {}: {} times vs {} scores",
                    s.subject_id,
                    s.times.len(),
                    s.scores.len()
                )));
            }
            if s.covariates.len() != covariate_dim {
                return Err(LcgaError::Dimension {
                    field: "covariates",
                    expected: covariate_dim,
                    found: s.covariates.len(),
                });
            }
            if s.times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(LcgaError::Data(format!(
                    "subject {}: times are not strictly increasing",
                    s.subject_id
                )));
            }
            if let Some(&t) = s.times.iter().find(|&&t| t < 1 || t > max_time) {
                return Err(LcgaError::Data(format!(
                    "subject {}: time {t} outside [1, {max_time}]",
                    s.subject_id
                )));
            }
            if let Some(&y) = s.scores.iter().find(|&&y| y < score_min || y > score_max) {
                return Err(LcgaError::Data(format!(
                    "subject {}: score {y} outside [{score_min}, {score_max}]",
                    s.subject_id
                )));
            }
            if s.covariates.iter().any(|z| !z.is_finite()) {
                return Err(LcgaError::Data(format!(
                    "subject {}: non-finite covariate",
                    s.subject_id
                )));
            }
        }
        Ok(Self {
            subjects,
            max_time,
            covariate_dim,
            score_min,
            score_max,
            category_map: None,
        })
    }

    pub fn with_category_map(mut self, map: CategoryMap) -> Self {
        self.category_map = Some(map);
        self
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(SubjectRecord::n_obs).sum()
    }

    pub fn max_time(&self) -> u32 {
        self.max_time
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn score_bounds(&self) -> (i32, i32) {
        (self.score_min, self.score_max)
    }

    pub fn category_map(&self) -> Option<&CategoryMap> {
        self.category_map.as_ref()
    }

    pub fn true_classes(&self) -> Option<Vec<usize>> {
        self.subjects.iter().map(|s| s.true_class).collect()
    }

    pub fn all_scores(&self) -> impl Iterator<Item = i32> + '_ {
        self.subjects.iter().flat_map(|s| s.scores.iter().copied())
    }
}

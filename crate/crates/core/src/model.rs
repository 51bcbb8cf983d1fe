//! Model specification, parameter containers and the flat unconstrained
//! parameter layout shared by the likelihood gradient and the optimizers.

use serde::{Deserialize, Serialize};

use crate::error::{LcgaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// Scores treated as a normal variable censored at both bounds.
    CensoredNormal { min: i32, max: i32 },
    /// Ordered categories `1..=n_categories` with probit cut points.
    CumulativeProbit { n_categories: usize },
}

impl Family {
    /// Inclusive range of admissible integer outcomes.
    pub fn outcome_range(&self) -> (i32, i32) {
        match *self {
            Family::CensoredNormal { min, max } => (min, max),
            Family::CumulativeProbit { n_categories } => (1, n_categories as i32),
        }
    }

    pub fn n_outcomes(&self) -> usize {
        let (lo, hi) = self.outcome_range();
        (hi - lo + 1) as usize
    }

    pub fn n_shared(&self) -> usize {
        match *self {
            Family::CensoredNormal { .. } => 1,
            Family::CumulativeProbit { n_categories } => n_categories - 1,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Family::CensoredNormal { .. } => "cnorm",
            Family::CumulativeProbit { .. } => "probit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub n_classes: usize,
    pub poly_order: usize,
    pub membership_covariates: bool,
}

impl ModelSpec {
    pub const MAX_POLY_ORDER: usize = 3;

    pub fn new(family: Family, n_classes: usize, poly_order: usize, membership_covariates: bool) -> Result<Self> {
        let spec = Self {
            family,
            n_classes,
            poly_order,
            membership_covariates,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            Family::CensoredNormal { min, max } if min >= max => {
                return Err(LcgaError::Config(format!(
                    "censored normal bounds need min < max, got [{min}, {max}]"
                )))
            }
            Family::CumulativeProbit { n_categories } if n_categories < 2 => {
                return Err(LcgaError::Config(format!(
                    "cumulative probit needs at least 2 categories, got {n_categories}"
                )))
            }
            _ => {}
        }
        if self.n_classes == 0 {
            return Err(LcgaError::Config("at least one class is required".into()));
        }
        if self.poly_order > Self::MAX_POLY_ORDER {
            return Err(LcgaError::Config(format!(
                "polynomial order {} exceeds {}",
                self.poly_order,
                Self::MAX_POLY_ORDER
            )));
        }
        Ok(())
    }

    pub fn with_classes(&self, n_classes: usize) -> Self {
        Self { n_classes, ..*self }
    }

    pub fn layout(&self, covariate_dim: usize) -> ParamLayout {
        ParamLayout::new(self, covariate_dim)
    }
}

/// Positions of each parameter block inside the flat vector:
/// membership intercepts, membership slopes (row-major), trajectory
/// coefficients (row-major, minus the pinned probit constant), then
/// `ln σ` or the raw thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_classes: usize,
    pub slope_dim: usize,
    pub n_coeffs: usize,
    pub pinned_constant: bool,
    pub n_shared: usize,
}

impl ParamLayout {
    fn new(spec: &ModelSpec, covariate_dim: usize) -> Self {
        Self {
            n_classes: spec.n_classes,
            slope_dim: if spec.membership_covariates { covariate_dim } else { 0 },
            n_coeffs: spec.poly_order + 1,
            pinned_constant: matches!(spec.family, Family::CumulativeProbit { .. }),
            n_shared: spec.family.n_shared(),
        }
    }

    pub fn n_membership(&self) -> usize {
        (self.n_classes - 1) * (1 + self.slope_dim)
    }

    pub fn trajectory_offset(&self) -> usize {
        self.n_membership()
    }

    pub fn n_trajectory(&self) -> usize {
        self.n_classes * self.n_coeffs - usize::from(self.pinned_constant)
    }

    pub fn shared_offset(&self) -> usize {
        self.trajectory_offset() + self.n_trajectory()
    }

    pub fn len(&self) -> usize {
        self.shared_offset() + self.n_shared
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of membership slope `(row, j)` for non-reference class `row`.
    pub fn slope_index(&self, row: usize, j: usize) -> usize {
        (self.n_classes - 1) + row * self.slope_dim + j
    }

    /// Flat index of trajectory coefficient `(k, m)`; `None` for the pinned
    /// constant of the first class.
    pub fn coeff_index(&self, k: usize, m: usize) -> Option<usize> {
        let raw = k * self.n_coeffs + m;
        if self.pinned_constant {
            if raw == 0 {
                None
            } else {
                Some(self.trajectory_offset() + raw - 1)
            }
        } else {
            Some(self.trajectory_offset() + raw)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measurement {
    CensoredNormal {
        sigma: f64,
    },
    /// `a_1 = η_1`, `a_l = ln(η_l - η_{l-1})` for `l ≥ 2`.
    CumulativeProbit {
        raw_thresholds: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    /// Logit intercepts of classes `1..K`; the last class is the reference.
    pub membership_intercepts: Vec<f64>,
    /// `(K-1) × p` slopes on baseline covariates; empty rows when unused.
    pub membership_slopes: Vec<Vec<f64>>,
    /// `K × (d+1)` polynomial coefficients in scaled time `t / time_scale`.
    pub trajectory: Vec<Vec<f64>>,
    pub measurement: Measurement,
    /// Divisor applied to period indices before the polynomial is evaluated.
    pub time_scale: f64,
}

/// Converts increasing cut points to the raw first-plus-log-gaps form.
pub fn thresholds_to_raw(eta: &[f64]) -> Result<Vec<f64>> {
    let mut raw = Vec::with_capacity(eta.len());
    for (l, &e) in eta.iter().enumerate() {
        if l == 0 {
            raw.push(e);
        } else {
            let gap = e - eta[l - 1];
            if !(gap > 0.0) {
                return Err(LcgaError::Domain(format!(
                    "thresholds must be strictly increasing (η_{} = {} ≥ η_{} = {})",
                    l,
                    eta[l - 1],
                    l + 1,
                    e
                )));
            }
            raw.push(gap.ln());
        }
    }
    Ok(raw)
}

pub fn raw_to_thresholds(raw: &[f64]) -> Vec<f64> {
    let mut eta = Vec::with_capacity(raw.len());
    for (l, &a) in raw.iter().enumerate() {
        if l == 0 {
            eta.push(a);
        } else {
            eta.push(eta[l - 1] + a.exp());
        }
    }
    eta
}

impl ParameterSet {
    /// Single-class parameters with no membership block.
    pub fn single_class(coeffs: Vec<f64>, measurement: Measurement, time_scale: f64) -> Self {
        Self {
            membership_intercepts: Vec::new(),
            membership_slopes: Vec::new(),
            trajectory: vec![coeffs],
            measurement,
            time_scale,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.trajectory.len()
    }

    pub fn thresholds(&self) -> Option<Vec<f64>> {
        match &self.measurement {
            Measurement::CumulativeProbit { raw_thresholds } => Some(raw_to_thresholds(raw_thresholds)),
            Measurement::CensoredNormal { .. } => None,
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self.measurement {
            Measurement::CensoredNormal { sigma } => Some(sigma),
            Measurement::CumulativeProbit { .. } => None,
        }
    }

    /// Class-`k` mean at period `t`.
    pub fn mean(&self, k: usize, t: f64) -> f64 {
        let tau = t / self.time_scale;
        self.trajectory[k].iter().rev().fold(0.0, |acc, &b| acc * tau + b)
    }

    /// Membership linear predictors `θ_k + λ_kᵀ z`, reference class last.
    pub fn membership_logits(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_classes());
        for (row, &theta) in self.membership_intercepts.iter().enumerate() {
            let slope = self
                .membership_slopes
                .get(row)
                .map(|s| s.iter().zip(z).map(|(l, z)| l * z).sum::<f64>())
                .unwrap_or(0.0);
            out.push(theta + slope);
        }
        out.push(0.0);
        out
    }

    pub fn validate(&self, spec: &ModelSpec, covariate_dim: usize) -> Result<()> {
        let k = spec.n_classes;
        check_len("trajectory", k, self.trajectory.len())?;
        for row in &self.trajectory {
            check_len("trajectory row", spec.poly_order + 1, row.len())?;
        }
        check_len("membership_intercepts", k - 1, self.membership_intercepts.len())?;
        if spec.membership_covariates {
            check_len("membership_slopes", k - 1, self.membership_slopes.len())?;
            for row in &self.membership_slopes {
                check_len("membership_slopes row", covariate_dim, row.len())?;
            }
        } else if self.membership_slopes.iter().flatten().any(|&v| v != 0.0) {
            return Err(LcgaError::Config(
                "membership slopes must be zero when covariates are off".into(),
            ));
        }
        if !(self.time_scale > 0.0) {
            return Err(LcgaError::Domain(format!(
                "time scale {} must be positive",
                self.time_scale
            )));
        }
        match (&spec.family, &self.measurement) {
            (Family::CensoredNormal { .. }, Measurement::CensoredNormal { sigma }) => {
                if !(*sigma > 0.0) || !sigma.is_finite() {
                    return Err(LcgaError::Domain(format!("sigma = {sigma} must be positive")));
                }
            }
            (Family::CumulativeProbit { n_categories }, Measurement::CumulativeProbit { raw_thresholds }) => {
                check_len("raw_thresholds", n_categories - 1, raw_thresholds.len())?;
                let eta = raw_to_thresholds(raw_thresholds);
                if eta.windows(2).any(|w| !(w[1] > w[0])) || eta.iter().any(|e| !e.is_finite()) {
                    return Err(LcgaError::Domain("thresholds are not strictly increasing".into()));
                }
            }
            _ => {
                return Err(LcgaError::Config(
                    "measurement parameters do not match the likelihood family".into(),
                ))
            }
        }
        Ok(())
    }

    /// Flattens into the unconstrained layout of [`ParamLayout`].
    pub fn to_flat(&self, layout: &ParamLayout) -> Vec<f64> {
        let mut x = vec![0.0; layout.len()];
        x[..layout.n_classes - 1].copy_from_slice(&self.membership_intercepts);
        for row in 0..layout.n_classes - 1 {
            for j in 0..layout.slope_dim {
                x[layout.slope_index(row, j)] = self.membership_slopes[row][j];
            }
        }
        for (k, row) in self.trajectory.iter().enumerate() {
            for (m, &b) in row.iter().enumerate() {
                if let Some(i) = layout.coeff_index(k, m) {
                    x[i] = b;
                }
            }
        }
        let off = layout.shared_offset();
        match &self.measurement {
            Measurement::CensoredNormal { sigma } => x[off] = sigma.ln(),
            Measurement::CumulativeProbit { raw_thresholds } => x[off..].copy_from_slice(raw_thresholds),
        }
        x
    }

    pub fn from_flat(spec: &ModelSpec, layout: &ParamLayout, time_scale: f64, x: &[f64]) -> Self {
        debug_assert_eq!(x.len(), layout.len());
        let k = layout.n_classes;
        let membership_intercepts = x[..k - 1].to_vec();
        let membership_slopes = if layout.slope_dim > 0 {
            (0..k - 1)
                .map(|row| (0..layout.slope_dim).map(|j| x[layout.slope_index(row, j)]).collect())
                .collect()
        } else {
            Vec::new()
        };
        let trajectory = (0..k)
            .map(|c| {
                (0..layout.n_coeffs)
                    .map(|m| layout.coeff_index(c, m).map_or(0.0, |i| x[i]))
                    .collect()
            })
            .collect();
        let off = layout.shared_offset();
        let measurement = match spec.family {
            Family::CensoredNormal { .. } => Measurement::CensoredNormal { sigma: x[off].exp() },
            Family::CumulativeProbit { .. } => Measurement::CumulativeProbit {
                raw_thresholds: x[off..].to_vec(),
            },
        };
        Self {
            membership_intercepts,
            membership_slopes,
            trajectory,
            measurement,
            time_scale,
        }
    }

    /// Relabels classes so that new class `j` is old class `perm[j]`.
    ///
    /// Membership logits are re-expressed against the new reference class.
    /// For the probit family the new first-class constant is shifted back
    /// to zero together with the thresholds, which leaves every category
    /// probability unchanged.
    pub fn permute_classes(&self, perm: &[usize]) -> Self {
        let k = self.n_classes();
        assert_eq!(perm.len(), k, "permutation length must equal class count");
        let reference = k - 1;
        let theta = |c: usize| {
            if c == reference {
                0.0
            } else {
                self.membership_intercepts[c]
            }
        };
        let p = self.membership_slopes.first().map_or(0, Vec::len);
        let slope = |c: usize, j: usize| {
            if c == reference || self.membership_slopes.is_empty() {
                0.0
            } else {
                self.membership_slopes[c][j]
            }
        };
        let base = perm[reference];
        let membership_intercepts = (0..reference).map(|j| theta(perm[j]) - theta(base)).collect();
        let membership_slopes = if self.membership_slopes.is_empty() {
            Vec::new()
        } else {
            (0..reference)
                .map(|j| (0..p).map(|i| slope(perm[j], i) - slope(base, i)).collect())
                .collect()
        };
        let mut trajectory: Vec<Vec<f64>> = perm.iter().map(|&c| self.trajectory[c].clone()).collect();
        let mut measurement = self.measurement.clone();
        if let Measurement::CumulativeProbit { raw_thresholds } = &mut measurement {
            let shift = trajectory[0][0];
            for row in &mut trajectory {
                row[0] -= shift;
            }
            raw_thresholds[0] -= shift;
        }
        Self {
            membership_intercepts,
            membership_slopes,
            trajectory,
            measurement,
            time_scale: self.time_scale,
        }
    }
}

fn check_len(field: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LcgaError::Dimension { field, expected, found })
    }
}

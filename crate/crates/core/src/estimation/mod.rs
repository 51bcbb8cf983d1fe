//! Maximum-likelihood fitting: one-class fits, start generation, the EM and
//! Marquardt backends, and the multi-start driver.

mod direct;
mod em;
mod starts;

use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::engine::{Order, Prepared};
use crate::error::{LcgaError, Result};
use crate::model::{ModelSpec, ParameterSet};
use crate::optim::Objective;
use crate::par;

pub use direct::direct_fit;
pub use em::em_fit;
pub use starts::{closed_form_start, generate_starts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Em,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Convergence {
    LoglikOnly {
        tol_ll: f64,
    },
    /// Parameter change, log-likelihood change and scaled gradient norm
    /// must all fall below their tolerances.
    Triple {
        tol_param: f64,
        tol_ll: f64,
        tol_grad: f64,
    },
}

impl Convergence {
    pub const DEFAULT_TOL_LL: f64 = 1e-8;
    pub const DEFAULT_TOL_PARAM: f64 = 1e-6;
    pub const DEFAULT_TOL_GRAD: f64 = 1e-4;

    pub fn loglik_only() -> Self {
        Convergence::LoglikOnly {
            tol_ll: Self::DEFAULT_TOL_LL,
        }
    }

    pub fn triple() -> Self {
        Convergence::Triple {
            tol_param: Self::DEFAULT_TOL_PARAM,
            tol_ll: Self::DEFAULT_TOL_LL,
            tol_grad: Self::DEFAULT_TOL_GRAD,
        }
    }

    pub fn tol_ll(&self) -> f64 {
        match *self {
            Convergence::LoglikOnly { tol_ll } | Convergence::Triple { tol_ll, .. } => tol_ll,
        }
    }

    pub fn tol_grad(&self) -> f64 {
        match *self {
            Convergence::LoglikOnly { .. } => Self::DEFAULT_TOL_GRAD,
            Convergence::Triple { tol_grad, .. } => tol_grad,
        }
    }

    fn needs_gradient(&self) -> bool {
        matches!(self, Convergence::Triple { .. })
    }

    /// Evaluates the criteria on one iteration's changes. `grad_norm` is
    /// only consulted in triple mode.
    pub fn assess(&self, ll_delta: f64, param_delta: f64, grad_norm: f64) -> ConvergenceDetail {
        let ll_ok = ll_delta.abs() < self.tol_ll();
        match *self {
            Convergence::LoglikOnly { .. } => ConvergenceDetail {
                ll_delta,
                param_delta,
                grad_norm,
                ll_ok,
                param_ok: None,
                grad_ok: None,
            },
            Convergence::Triple {
                tol_param, tol_grad, ..
            } => ConvergenceDetail {
                ll_delta,
                param_delta,
                grad_norm,
                ll_ok,
                param_ok: Some(param_delta < tol_param),
                grad_ok: Some(grad_norm < tol_grad),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Convergence::LoglikOnly { tol_ll } => tol_ll > 0.0,
            Convergence::Triple {
                tol_param,
                tol_ll,
                tol_grad,
            } => tol_param > 0.0 && tol_ll > 0.0 && tol_grad > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(LcgaError::Config("convergence tolerances must be positive".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_starts: usize,
    pub max_iter: usize,
    pub mode: Backend,
    pub convergence: Convergence,
    pub perturbation_scale: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 20,
            max_iter: 500,
            mode: Backend::Em,
            convergence: Convergence::loglik_only(),
            perturbation_scale: 0.5,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(LcgaError::Config("n_starts must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(LcgaError::Config("max_iter must be at least 1".into()));
        }
        if !(self.perturbation_scale >= 0.0) {
            return Err(LcgaError::Config("perturbation_scale must be non-negative".into()));
        }
        self.convergence.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    MaxIterations,
    FalseConvergence,
}

impl FitStatus {
    pub fn label(&self) -> &'static str {
        match self {
            FitStatus::Converged => "Converged",
            FitStatus::MaxIterations => "MaxIterations",
            FitStatus::FalseConvergence => "False Convergence",
        }
    }
}

impl fmt::Display for FitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Final-iteration deltas and the verdict of each criterion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDetail {
    pub ll_delta: f64,
    pub param_delta: f64,
    /// Max-norm of the gradient divided by `1 + |loglik|`.
    pub grad_norm: f64,
    pub ll_ok: bool,
    pub param_ok: Option<bool>,
    pub grad_ok: Option<bool>,
}

impl ConvergenceDetail {
    pub fn all_ok(&self) -> bool {
        self.ll_ok && self.param_ok.unwrap_or(true) && self.grad_ok.unwrap_or(true)
    }

    fn unset() -> Self {
        Self {
            ll_delta: f64::NAN,
            param_delta: f64::NAN,
            grad_norm: f64::NAN,
            ll_ok: false,
            param_ok: None,
            grad_ok: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub status: FitStatus,
    pub loglik: f64,
    pub n_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ParameterSet,
    pub loglik: f64,
    pub n_params: usize,
    pub n_subjects: usize,
    pub n_observations: usize,
    pub converged: bool,
    pub status: FitStatus,
    pub detail: ConvergenceDetail,
    pub n_iter: usize,
    pub start_index_of_best: usize,
    pub starts: Vec<StartSummary>,
    /// Observed-data log-likelihood after every accepted iteration.
    pub loglik_trace: Vec<f64>,
    /// Marquardt damping after the last accepted step (direct backend only).
    pub final_damping: Option<f64>,
    pub message: Option<String>,
    pub wall_time: Duration,
}

impl FitResult {
    pub fn bic(&self) -> f64 {
        crate::selection::bic(self.loglik, self.n_params, self.n_subjects)
    }

    pub fn aic(&self) -> f64 {
        crate::selection::aic(self.loglik, self.n_params)
    }

    fn summary(&self) -> StartSummary {
        StartSummary {
            status: self.status,
            loglik: self.loglik,
            n_iter: self.n_iter,
        }
    }
}

/// Observed-data log-likelihood over the full flat vector.
pub(crate) struct FullLoglik<'p, 'a> {
    pub prepared: &'p Prepared<'a>,
}

impl Objective for FullLoglik<'_, '_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.prepared.loglik(&self.prepared.unflatten(x))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let params = self.prepared.unflatten(x);
        let table = self.prepared.table(&params, Order::Gradient);
        let state = self.prepared.e_step_with(&params, &table);
        self.prepared.full_gradient_with(&params, &state, &table)
    }
}

pub(crate) fn scaled_grad_norm(grad: &[f64], loglik: f64) -> f64 {
    grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / (1.0 + loglik.abs())
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn check_inputs(spec: &ModelSpec, data: &LongitudinalDataset, config: &FitConfig) -> Result<()> {
    spec.validate()?;
    config.validate()?;
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

/// Describes data on which a single-class model has no interior optimum.
fn degenerate_reason(spec: &ModelSpec, data: &LongitudinalDataset) -> Option<String> {
    let mut scores = data.all_scores();
    let first = scores.next()?;
    if scores.any(|s| s != first) {
        return None;
    }
    let (lo, hi) = spec.family.outcome_range();
    if first == lo || first == hi {
        Some(format!("every score equals the boundary value {first}"))
    } else if matches!(spec.family, crate::model::Family::CumulativeProbit { .. }) {
        Some(format!("only category {first} is observed"))
    } else {
        None
    }
}

/// Single-class fit from a closed-form start, polished by the Marquardt
/// backend. Deterministic given the data.
pub fn fit_one_class(spec: &ModelSpec, data: &LongitudinalDataset, config: &FitConfig) -> Result<FitResult> {
    if spec.n_classes != 1 {
        return Err(LcgaError::Config(format!(
            "fit_one_class needs K = 1, got {}",
            spec.n_classes
        )));
    }
    check_inputs(spec, data, config)?;
    let started = Instant::now();
    let start = closed_form_start(spec, data);
    if let Some(reason) = degenerate_reason(spec, data) {
        let prepared = Prepared::new(spec, data, start.time_scale);
        let loglik = prepared.loglik(&start);
        return Ok(FitResult {
            spec: *spec,
            n_params: prepared.layout.len(),
            params: start,
            loglik,
            n_subjects: data.n_subjects(),
            n_observations: data.n_observations(),
            converged: false,
            status: FitStatus::FalseConvergence,
            detail: ConvergenceDetail::unset(),
            n_iter: 0,
            start_index_of_best: 0,
            starts: Vec::new(),
            loglik_trace: vec![loglik],
            final_damping: None,
            message: Some(format!("degenerate data: {reason}")),
            wall_time: started.elapsed(),
        });
    }
    let mut fit = direct_fit(spec, data, &start, config)?;
    fit.starts = vec![fit.summary()];
    fit.wall_time = started.elapsed();
    Ok(fit)
}

/// Fits from `config.n_starts` perturbed starts and keeps the converged
/// result with the highest log-likelihood.
pub fn multi_start_fit(spec: &ModelSpec, data: &LongitudinalDataset, config: &FitConfig) -> Result<FitResult> {
    check_inputs(spec, data, config)?;
    let started = Instant::now();
    let one_spec = spec.with_classes(1);
    let one_class = fit_one_class(&one_spec, data, config)?;
    if spec.n_classes == 1 {
        let mut fit = one_class;
        fit.wall_time = started.elapsed();
        return Ok(fit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts = generate_starts(&one_class, spec, data, config, &mut rng);
    let fits: Vec<Result<FitResult>> = par::map_indexed(starts.len(), |i| match config.mode {
        Backend::Em => em_fit(spec, data, &starts[i], config),
        Backend::Direct => direct_fit(spec, data, &starts[i], config),
    });
    let fits: Vec<FitResult> = fits.into_iter().collect::<Result<_>>()?;
    let mut fit = select_best(fits);
    fit.wall_time = started.elapsed();
    Ok(fit)
}

/// Highest log-likelihood among converged fits (first index on ties); the
/// best finite fit marked FalseConvergence when none converged.
fn select_best(fits: Vec<FitResult>) -> FitResult {
    let starts: Vec<StartSummary> = fits.iter().map(FitResult::summary).collect();
    let pick = |require_converged: bool| {
        fits.iter()
            .enumerate()
            .filter(|(_, f)| f.loglik.is_finite() && (!require_converged || f.converged))
            .fold(None, |best: Option<(usize, f64)>, (i, f)| match best {
                Some((_, ll)) if ll >= f.loglik => best,
                _ => Some((i, f.loglik)),
            })
            .map(|(i, _)| i)
    };
    let (index, any_converged) = match pick(true) {
        Some(i) => (i, true),
        None => (pick(false).unwrap_or(0), false),
    };
    let mut best = fits.into_iter().nth(index).expect("at least one start");
    best.start_index_of_best = index;
    best.starts = starts;
    if !any_converged {
        best.converged = false;
        if best.status == FitStatus::Converged {
            best.status = FitStatus::FalseConvergence;
        }
        best.message
            .get_or_insert_with(|| "no start satisfied the convergence criteria".into());
    }
    best
}

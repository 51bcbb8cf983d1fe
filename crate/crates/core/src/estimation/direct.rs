use std::time::Instant;

use crate::data::LongitudinalDataset;
use crate::engine::Prepared;
use crate::error::Result;
use crate::estimation::{
    max_abs_diff, scaled_grad_norm, ConvergenceDetail, FitConfig, FitResult, FitStatus, FullLoglik,
};
use crate::model::{ModelSpec, ParameterSet};
use crate::optim::{fd_hessian, regularized_step, Objective};

pub const DAMPING_INITIAL: f64 = 1e-3;
pub const DAMPING_FLOOR: f64 = 1e-9;
const DAMPING_CEILING: f64 = 1e14;
/// Changes this small are rounding noise in the log-likelihood sum.
const ROUNDING_SLACK: f64 = 1e-11;

/// Marquardt-damped Newton ascent on the observed-data log-likelihood.
///
/// Each iteration solves `(-H + λI) Δ = g`; a step is accepted only if it
/// does not lower the log-likelihood, after which `λ` shrinks tenfold
/// (never below the floor). Rejected steps multiply `λ` by ten.
pub fn direct_fit(
    spec: &ModelSpec,
    data: &LongitudinalDataset,
    start: &ParameterSet,
    config: &FitConfig,
) -> Result<FitResult> {
    start.validate(spec, data.covariate_dim())?;
    let started = Instant::now();
    let prepared = Prepared::new(spec, data, start.time_scale);
    let objective = FullLoglik { prepared: &prepared };
    let mut x = start.to_flat(&prepared.layout);
    let mut loglik = objective.value(&x);
    let mut trace = vec![loglik];
    let mut damping = DAMPING_INITIAL;
    let mut settled_damping = damping;
    let mut detail = ConvergenceDetail::unset();
    let mut status = FitStatus::MaxIterations;
    let mut message = None;
    let mut n_iter = 0;
    let mut grad = objective.gradient(&x);

    if !loglik.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        status = FitStatus::FalseConvergence;
        message = Some("non-finite log-likelihood at the start".to_string());
    } else {
        'outer: for iter in 1..=config.max_iter {
            n_iter = iter;
            let hessian = fd_hessian(&objective, &x);
            let accepted = loop {
                if damping > DAMPING_CEILING {
                    break None;
                }
                let Some((step, used)) = regularized_step(&hessian, &grad, damping) else {
                    break None;
                };
                damping = used;
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + s).collect();
                let value = objective.value(&trial);
                if value.is_finite() && value >= loglik - ROUNDING_SLACK {
                    damping = (damping / 10.0).max(DAMPING_FLOOR);
                    settled_damping = damping;
                    break Some((trial, value));
                }
                damping *= 10.0;
            };
            let Some((next, value)) = accepted else {
                let g = scaled_grad_norm(&grad, loglik);
                detail = config.convergence.assess(0.0, 0.0, g);
                if g < config.convergence.tol_grad() {
                    detail.ll_ok = true;
                    status = FitStatus::Converged;
                } else {
                    status = FitStatus::FalseConvergence;
                    message = Some(format!("no improving step at iteration {iter}; scaled gradient {g:e}"));
                }
                break 'outer;
            };
            let ll_delta = value - loglik;
            let param_delta = max_abs_diff(&next, &x);
            x = next;
            loglik = value;
            trace.push(loglik);
            grad = objective.gradient(&x);
            if grad.iter().any(|g| !g.is_finite()) {
                status = FitStatus::FalseConvergence;
                message = Some(format!("non-finite gradient at iteration {iter}"));
                break;
            }
            detail = config
                .convergence
                .assess(ll_delta, param_delta, scaled_grad_norm(&grad, loglik));
            if detail.all_ok() {
                status = FitStatus::Converged;
                break;
            }
        }
    }
    if detail.grad_norm.is_nan() {
        detail.grad_norm = scaled_grad_norm(&grad, loglik);
    }
    Ok(FitResult {
        spec: *spec,
        params: prepared.unflatten(&x),
        loglik,
        n_params: prepared.layout.len(),
        n_subjects: data.n_subjects(),
        n_observations: data.n_observations(),
        converged: status == FitStatus::Converged,
        status,
        detail,
        n_iter,
        start_index_of_best: 0,
        starts: Vec::new(),
        loglik_trace: trace,
        final_damping: Some(settled_damping),
        message,
        wall_time: started.elapsed(),
    })
}

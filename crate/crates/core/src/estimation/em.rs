use std::time::Instant;

use nalgebra::DMatrix;

use crate::data::LongitudinalDataset;
use crate::engine::{Order, Prepared};
use crate::error::Result;
use crate::estimation::{max_abs_diff, scaled_grad_norm, ConvergenceDetail, FitConfig, FitResult, FitStatus};
use crate::model::{ModelSpec, ParameterSet};
use crate::optim::{newton_ascent, Objective};

/// Inner Newton iterations per M-step.
const M_STEP_MAX_ITER: usize = 5;
const REPAIR_ATTEMPTS: usize = 3;

/// Membership block of the expected complete-data log-likelihood.
struct MembershipStep<'p, 'a> {
    prepared: &'p Prepared<'a>,
    base: &'p [f64],
    group_w: &'p [f64],
}

impl MembershipStep<'_, '_> {
    fn params(&self, xm: &[f64]) -> ParameterSet {
        let mut x = self.base.to_vec();
        x[..xm.len()].copy_from_slice(xm);
        self.prepared.unflatten(&x)
    }
}

impl Objective for MembershipStep<'_, '_> {
    fn value(&self, xm: &[f64]) -> f64 {
        self.prepared.membership_objective(&self.params(xm), self.group_w)
    }

    fn gradient(&self, xm: &[f64]) -> Vec<f64> {
        self.prepared.membership_gradient(&self.params(xm), self.group_w)
    }

    fn hessian(&self, xm: &[f64]) -> DMatrix<f64> {
        self.prepared.membership_hessian(&self.params(xm), self.group_w)
    }
}

/// Trajectory and measurement block of the expected complete-data
/// log-likelihood, over posterior-weighted cell counts.
struct MeasurementStep<'p, 'a> {
    prepared: &'p Prepared<'a>,
    base: &'p [f64],
    agg: &'p [f64],
}

impl MeasurementStep<'_, '_> {
    fn params(&self, xs: &[f64]) -> ParameterSet {
        let mut x = self.base.to_vec();
        let off = self.prepared.layout.trajectory_offset();
        x[off..].copy_from_slice(xs);
        self.prepared.unflatten(&x)
    }
}

impl Objective for MeasurementStep<'_, '_> {
    fn value(&self, xs: &[f64]) -> f64 {
        let params = self.params(xs);
        let table = self.prepared.table(&params, Order::Value);
        self.prepared.measurement_objective(&table, self.agg)
    }

    fn gradient(&self, xs: &[f64]) -> Vec<f64> {
        let params = self.params(xs);
        let table = self.prepared.table(&params, Order::Gradient);
        self.prepared.measurement_gradient(&table, self.agg)
    }

    fn hessian(&self, xs: &[f64]) -> DMatrix<f64> {
        self.gradient_hessian(xs).1
    }

    fn gradient_hessian(&self, xs: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let params = self.params(xs);
        let table = self.prepared.table(&params, Order::Hessian);
        (
            self.prepared.measurement_gradient(&table, self.agg),
            self.prepared.measurement_hessian(&table, self.agg),
        )
    }
}

/// Generalized EM: posterior class weights, then non-decreasing Newton
/// updates of the membership block and of the trajectory/measurement block.
pub fn em_fit(
    spec: &ModelSpec,
    data: &LongitudinalDataset,
    start: &ParameterSet,
    config: &FitConfig,
) -> Result<FitResult> {
    start.validate(spec, data.covariate_dim())?;
    let started = Instant::now();
    let prepared = Prepared::new(spec, data, start.time_scale);
    let layout = prepared.layout;
    let n_membership = layout.n_membership();
    let mut x = start.to_flat(&layout);
    let mut state = prepared.e_step(start);
    let mut loglik = state.loglik;
    let mut trace = vec![loglik];
    let mut detail = ConvergenceDetail::unset();
    let mut status = FitStatus::MaxIterations;
    let mut message = None;
    let mut n_iter = 0;

    if state.non_finite_subject.is_some() {
        status = FitStatus::FalseConvergence;
        message = Some("non-finite log-likelihood at the start".to_string());
    } else {
        'outer: for iter in 1..=config.max_iter {
            n_iter = iter;
            let agg = prepared.aggregate(&state.weights);
            let group_w = prepared.group_weights(&state.weights);
            let mut ridge = 0.0;
            let mut accepted = None;
            for _ in 0..=REPAIR_ATTEMPTS {
                let mut next = x.clone();
                if n_membership > 0 {
                    let step = MembershipStep {
                        prepared: &prepared,
                        base: &x,
                        group_w: &group_w,
                    };
                    let out = newton_ascent(&step, &x[..n_membership], M_STEP_MAX_ITER, ridge);
                    next[..n_membership].copy_from_slice(&out);
                }
                let step = MeasurementStep {
                    prepared: &prepared,
                    base: &next,
                    agg: &agg,
                };
                let out = newton_ascent(&step, &next[n_membership..], M_STEP_MAX_ITER, ridge);
                next[n_membership..].copy_from_slice(&out);
                let next_state = prepared.e_step(&prepared.unflatten(&next));
                if next_state.loglik.is_finite() && next_state.non_finite_subject.is_none() {
                    accepted = Some((next, next_state));
                    break;
                }
                ridge = if ridge == 0.0 { 1e-2 } else { ridge * 10.0 };
            }
            let Some((next, next_state)) = accepted else {
                status = FitStatus::FalseConvergence;
                message = Some(format!("non-finite log-likelihood at iteration {iter} after repairs"));
                break;
            };
            let ll_delta = next_state.loglik - loglik;
            let param_delta = max_abs_diff(&next, &x);
            if ll_delta < 0.0 {
                // rounding-level decrease: the previous point is a fixed point
                let params = prepared.unflatten(&x);
                let grad = scaled_grad_norm(&prepared.full_gradient(&params, &state), loglik);
                detail = config.convergence.assess(ll_delta, 0.0, grad);
                let stalled = -ll_delta <= 1e-10 * (1.0 + loglik.abs());
                status = if stalled && detail.grad_ok.unwrap_or(true) {
                    detail.ll_ok = true;
                    FitStatus::Converged
                } else {
                    FitStatus::FalseConvergence
                };
                if status == FitStatus::FalseConvergence {
                    message = Some(format!("log-likelihood decreased by {:e}", -ll_delta));
                }
                break 'outer;
            }
            x = next;
            state = next_state;
            loglik = state.loglik;
            trace.push(loglik);
            let grad = if config.convergence.needs_gradient() {
                let params = prepared.unflatten(&x);
                scaled_grad_norm(&prepared.full_gradient(&params, &state), loglik)
            } else {
                f64::NAN
            };
            detail = config.convergence.assess(ll_delta, param_delta, grad);
            if detail.all_ok() {
                status = FitStatus::Converged;
                break;
            }
        }
    }
    let params = prepared.unflatten(&x);
    if detail.grad_norm.is_nan() && loglik.is_finite() {
        detail.grad_norm = scaled_grad_norm(&prepared.full_gradient(&params, &state), loglik);
    }
    let converged = status == FitStatus::Converged;
    Ok(FitResult {
        spec: *spec,
        params,
        loglik,
        n_params: layout.len(),
        n_subjects: data.n_subjects(),
        n_observations: data.n_observations(),
        converged,
        status,
        detail,
        n_iter,
        start_index_of_best: 0,
        starts: Vec::new(),
        loglik_trace: trace,
        final_damping: None,
        message,
        wall_time: started.elapsed(),
    })
}

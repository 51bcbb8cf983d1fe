//! Precomputed evaluation state shared by the fitting backends.
//!
//! Outcomes are integers on a bounded range and periods are integers in
//! `1..=T`, so every class-conditional observation term is a lookup into a
//! `K × T × V` table. Subjects with identical baseline covariates share one
//! membership row.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::data::LongitudinalDataset;
use crate::likelihood::{cnorm_curvature, cnorm_terms, log_sum_exp, probit_curvature, probit_obs_loglik, probit_terms};
use crate::model::{Family, Measurement, ModelSpec, ParamLayout, ParameterSet};

pub(crate) struct Prepared<'a> {
    pub spec: &'a ModelSpec,
    pub layout: ParamLayout,
    pub time_scale: f64,
    n_times: usize,
    out_lo: i32,
    n_out: usize,
    /// Table cell `(t - 1) * n_out + (y - out_lo)` of every observation.
    cells: Vec<u32>,
    offsets: Vec<usize>,
    groups: Vec<Vec<f64>>,
    group_of: Vec<usize>,
}

/// How many derivatives an [`ObsTable`] carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

pub(crate) struct ObsTable {
    lp: Vec<f64>,
    dmu: Vec<f64>,
    dshared: Vec<f64>,
    d2mu: Vec<f64>,
    dmu_shared: Vec<f64>,
    d2shared: Vec<f64>,
}

pub(crate) struct EState {
    pub loglik: f64,
    /// Row-major `n × K` posterior class probabilities.
    pub weights: Vec<f64>,
    pub non_finite_subject: Option<usize>,
}

impl<'a> Prepared<'a> {
    pub fn new(spec: &'a ModelSpec, data: &LongitudinalDataset, time_scale: f64) -> Self {
        let layout = spec.layout(data.covariate_dim());
        let (out_lo, out_hi) = spec.family.outcome_range();
        let n_out = (out_hi - out_lo + 1) as usize;
        let mut cells = Vec::with_capacity(data.n_observations());
        let mut offsets = Vec::with_capacity(data.n_subjects() + 1);
        offsets.push(0);
        let mut groups: Vec<Vec<f64>> = Vec::new();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut group_of = Vec::with_capacity(data.n_subjects());
        for s in data.subjects() {
            for (&t, &y) in s.times.iter().zip(&s.scores) {
                cells.push(((t as usize - 1) * n_out + (y - out_lo) as usize) as u32);
            }
            offsets.push(cells.len());
            let z: Vec<f64> = if spec.membership_covariates {
                s.covariates.clone()
            } else {
                Vec::new()
            };
            let key: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                groups.push(z);
                groups.len() - 1
            });
            group_of.push(g);
        }
        Self {
            spec,
            layout,
            time_scale,
            n_times: data.max_time() as usize,
            out_lo,
            n_out,
            cells,
            offsets,
            groups,
            group_of,
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.group_of.len()
    }

    pub fn n_classes(&self) -> usize {
        self.layout.n_classes
    }

    fn n_cells(&self) -> usize {
        self.n_times * self.n_out
    }

    pub fn unflatten(&self, x: &[f64]) -> ParameterSet {
        ParameterSet::from_flat(self.spec, &self.layout, self.time_scale, x)
    }

    /// Log-probabilities for every class, period and outcome, with
    /// derivatives in `μ` and the shared parameters up to `order`.
    pub fn table(&self, params: &ParameterSet, order: Order) -> ObsTable {
        let k_n = self.n_classes();
        let n_cells = self.n_cells();
        let ns = self.layout.n_shared;
        let size = k_n * n_cells;
        let first = if order >= Order::Gradient { size } else { 0 };
        let second = if order >= Order::Hessian { size } else { 0 };
        let mut table = ObsTable {
            lp: vec![0.0; size],
            dmu: vec![0.0; first],
            dshared: vec![0.0; first * ns],
            d2mu: vec![0.0; second],
            dmu_shared: vec![0.0; second * ns],
            d2shared: vec![0.0; second * ns * ns],
        };
        let eta = params.thresholds().unwrap_or_default();
        let gap_scale: Vec<f64> = match &params.measurement {
            Measurement::CumulativeProbit { raw_thresholds } => raw_thresholds
                .iter()
                .enumerate()
                .map(|(l, a)| if l == 0 { 1.0 } else { a.exp() })
                .collect(),
            Measurement::CensoredNormal { .. } => Vec::new(),
        };
        // ∂η_l/∂a_m
        let jac = |l: usize, m: usize| {
            if m == 0 {
                1.0
            } else if m <= l {
                gap_scale[m]
            } else {
                0.0
            }
        };
        for k in 0..k_n {
            for t in 0..self.n_times {
                let mu = params.mean(k, (t + 1) as f64);
                for v in 0..self.n_out {
                    let idx = k * n_cells + t * self.n_out + v;
                    let y = self.out_lo + v as i32;
                    if order == Order::Value {
                        table.lp[idx] = match (&self.spec.family, &params.measurement) {
                            (Family::CensoredNormal { min, max }, Measurement::CensoredNormal { sigma }) => {
                                cnorm_terms(y, mu, *sigma, *min, *max).0
                            }
                            _ => probit_obs_loglik(&eta, y as usize, mu),
                        };
                        continue;
                    }
                    match (&self.spec.family, &params.measurement) {
                        (Family::CensoredNormal { min, max }, Measurement::CensoredNormal { sigma }) => {
                            let (l, dm, ds) = cnorm_terms(y, mu, *sigma, *min, *max);
                            table.lp[idx] = l;
                            table.dmu[idx] = dm;
                            table.dshared[idx] = ds;
                            if order < Order::Hessian {
                                continue;
                            }
                            let (mm, ms, ss) = cnorm_curvature(y, mu, *sigma, *min, *max);
                            table.d2mu[idx] = mm;
                            table.dmu_shared[idx] = ms;
                            table.d2shared[idx] = ss;
                        }
                        _ => {
                            let c = y as usize;
                            let (l, dm, r_lo, r_hi) = probit_terms(&eta, c, mu);
                            table.lp[idx] = l;
                            table.dmu[idx] = dm;
                            // nonzero threshold slots: lower η_{c-1} at c-2, upper η_c at c-1
                            let lower = (c >= 2).then(|| c - 2);
                            let upper = (c <= ns).then(|| c - 1);
                            for m in 0..ns {
                                let g: f64 = [(lower, r_lo), (upper, r_hi)]
                                    .iter()
                                    .filter_map(|&(slot, r)| slot.map(|l| r * jac(l, m)))
                                    .sum();
                                table.dshared[idx * ns + m] = g;
                            }
                            if order < Order::Hessian {
                                continue;
                            }
                            let (haa, hbb, hab) = probit_curvature(&eta, c, mu, r_lo, r_hi);
                            table.d2mu[idx] = haa + hbb + 2.0 * hab;
                            let slots = [(lower, r_lo, -(haa + hab)), (upper, r_hi, -(hab + hbb))];
                            for m in 0..ns {
                                let gm: f64 = slots
                                    .iter()
                                    .filter_map(|&(slot, _, hm)| slot.map(|l| hm * jac(l, m)))
                                    .sum();
                                table.dmu_shared[idx * ns + m] = gm;
                            }
                            let h_eta = |a: Option<usize>, b: Option<usize>| match (a, b) {
                                (Some(a), Some(b)) if a == b => {
                                    if Some(a) == lower {
                                        haa
                                    } else {
                                        hbb
                                    }
                                }
                                (Some(_), Some(_)) => hab,
                                _ => 0.0,
                            };
                            for m in 0..ns {
                                for m2 in 0..ns {
                                    let mut h = 0.0;
                                    for &(la, _, _) in &slots {
                                        for &(lb, _, _) in &slots {
                                            if let (Some(x), Some(y)) = (la, lb) {
                                                h += jac(x, m) * h_eta(la, lb) * jac(y, m2);
                                            }
                                        }
                                    }
                                    if m == m2 && m >= 1 {
                                        // ∂²η_l/∂a_m² = exp(a_m) for l ≥ m
                                        for &(slot, r, _) in &slots {
                                            if slot.is_some_and(|l| l >= m) {
                                                h += r * gap_scale[m];
                                            }
                                        }
                                    }
                                    table.d2shared[(idx * ns + m) * ns + m2] = h;
                                }
                            }
                        }
                    }
                }
            }
        }
        table
    }

    /// `n × K` class-conditional series log-likelihoods.
    pub fn class_logliks(&self, table: &ObsTable) -> Vec<f64> {
        let k_n = self.n_classes();
        let n_cells = self.n_cells();
        let mut out = vec![0.0; self.n_subjects() * k_n];
        for i in 0..self.n_subjects() {
            let obs = &self.cells[self.offsets[i]..self.offsets[i + 1]];
            for k in 0..k_n {
                let base = &table.lp[k * n_cells..(k + 1) * n_cells];
                out[i * k_n + k] = obs.iter().map(|&c| base[c as usize]).sum();
            }
        }
        out
    }

    /// `G × K` log membership probabilities, one row per covariate group.
    pub fn group_log_membership(&self, params: &ParameterSet) -> Vec<f64> {
        let k_n = self.n_classes();
        let mut out = Vec::with_capacity(self.groups.len() * k_n);
        for z in &self.groups {
            let logits = params.membership_logits(z);
            let lse = log_sum_exp(&logits);
            out.extend(logits.iter().map(|l| l - lse));
        }
        out
    }

    pub fn e_step(&self, params: &ParameterSet) -> EState {
        let table = self.table(params, Order::Value);
        self.e_step_with(params, &table)
    }

    pub fn e_step_with(&self, params: &ParameterSet, table: &ObsTable) -> EState {
        let k_n = self.n_classes();
        let mut weights = self.class_logliks(table);
        let log_pi = self.group_log_membership(params);
        let mut loglik = 0.0;
        let mut non_finite_subject = None;
        for i in 0..self.n_subjects() {
            let g = self.group_of[i];
            let row = &mut weights[i * k_n..(i + 1) * k_n];
            for (k, w) in row.iter_mut().enumerate() {
                *w += log_pi[g * k_n + k];
            }
            let li = crate::likelihood::softmax_in_place(row);
            if !li.is_finite() && non_finite_subject.is_none() {
                non_finite_subject = Some(i);
            }
            loglik += li;
        }
        EState {
            loglik,
            weights,
            non_finite_subject,
        }
    }

    pub fn loglik(&self, params: &ParameterSet) -> f64 {
        let state = self.e_step(params);
        if state.non_finite_subject.is_some() {
            f64::NAN
        } else {
            state.loglik
        }
    }

    /// Posterior-weighted counts `K × (T·V)` of each observation cell.
    pub fn aggregate(&self, weights: &[f64]) -> Vec<f64> {
        let k_n = self.n_classes();
        let n_cells = self.n_cells();
        let mut agg = vec![0.0; k_n * n_cells];
        for i in 0..self.n_subjects() {
            let w = &weights[i * k_n..(i + 1) * k_n];
            for &c in &self.cells[self.offsets[i]..self.offsets[i + 1]] {
                for k in 0..k_n {
                    agg[k * n_cells + c as usize] += w[k];
                }
            }
        }
        agg
    }

    /// Posterior weights summed within covariate groups, `G × K`.
    pub fn group_weights(&self, weights: &[f64]) -> Vec<f64> {
        let k_n = self.n_classes();
        let mut out = vec![0.0; self.groups.len() * k_n];
        for (i, &g) in self.group_of.iter().enumerate() {
            for k in 0..k_n {
                out[g * k_n + k] += weights[i * k_n + k];
            }
        }
        out
    }

    pub fn measurement_objective(&self, table: &ObsTable, agg: &[f64]) -> f64 {
        agg.iter()
            .zip(&table.lp)
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, l)| w * l)
            .sum()
    }

    /// Gradient of `Σ agg · lp` over the trajectory and shared blocks, in
    /// flat-layout order starting at the trajectory offset.
    pub fn measurement_gradient(&self, table: &ObsTable, agg: &[f64]) -> Vec<f64> {
        let layout = &self.layout;
        let n_cells = self.n_cells();
        let n_shared = layout.n_shared;
        let off = layout.trajectory_offset();
        let mut grad = vec![0.0; layout.n_trajectory() + n_shared];
        let shared_off = layout.shared_offset() - off;
        for k in 0..self.n_classes() {
            let mut per_power = vec![0.0; layout.n_coeffs];
            for t in 0..self.n_times {
                let tau = (t + 1) as f64 / self.time_scale;
                let mut d_mu = 0.0;
                for v in 0..self.n_out {
                    let idx = k * n_cells + t * self.n_out + v;
                    let w = agg[idx];
                    if w == 0.0 {
                        continue;
                    }
                    d_mu += w * table.dmu[idx];
                    for s in 0..n_shared {
                        grad[shared_off + s] += w * table.dshared[idx * n_shared + s];
                    }
                }
                let mut power = 1.0;
                for slot in per_power.iter_mut() {
                    *slot += d_mu * power;
                    power *= tau;
                }
            }
            for (m, g) in per_power.into_iter().enumerate() {
                if let Some(i) = layout.coeff_index(k, m) {
                    grad[i - off] = g;
                }
            }
        }
        grad
    }

    /// Hessian of `Σ agg · lp` over the trajectory and shared blocks.
    pub fn measurement_hessian(&self, table: &ObsTable, agg: &[f64]) -> DMatrix<f64> {
        let layout = &self.layout;
        let n_cells = self.n_cells();
        let ns = layout.n_shared;
        let off = layout.trajectory_offset();
        let dim = layout.n_trajectory() + ns;
        let shared_off = layout.shared_offset() - off;
        let mut h = DMatrix::zeros(dim, dim);
        let mut w_mu_s = vec![0.0; ns];
        for k in 0..self.n_classes() {
            let coeff: Vec<Option<usize>> = (0..layout.n_coeffs)
                .map(|m| layout.coeff_index(k, m).map(|i| i - off))
                .collect();
            for t in 0..self.n_times {
                let tau = (t + 1) as f64 / self.time_scale;
                let mut w_mumu = 0.0;
                w_mu_s.iter_mut().for_each(|v| *v = 0.0);
                for v in 0..self.n_out {
                    let idx = k * n_cells + t * self.n_out + v;
                    let w = agg[idx];
                    if w == 0.0 {
                        continue;
                    }
                    w_mumu += w * table.d2mu[idx];
                    for a in 0..ns {
                        w_mu_s[a] += w * table.dmu_shared[idx * ns + a];
                        for b in 0..ns {
                            h[(shared_off + a, shared_off + b)] += w * table.d2shared[(idx * ns + a) * ns + b];
                        }
                    }
                }
                let powers: Vec<f64> = (0..layout.n_coeffs).map(|m| tau.powi(m as i32)).collect();
                for (m, ci) in coeff.iter().enumerate() {
                    let Some(i) = *ci else { continue };
                    for (m2, cj) in coeff.iter().enumerate() {
                        if let Some(j) = *cj {
                            h[(i, j)] += w_mumu * powers[m] * powers[m2];
                        }
                    }
                    for a in 0..ns {
                        let v = w_mu_s[a] * powers[m];
                        h[(i, shared_off + a)] += v;
                        h[(shared_off + a, i)] += v;
                    }
                }
            }
        }
        h
    }

    /// Hessian of the membership objective over the membership block.
    pub fn membership_hessian(&self, params: &ParameterSet, group_w: &[f64]) -> DMatrix<f64> {
        let k_n = self.n_classes();
        let layout = &self.layout;
        let dim = layout.n_membership();
        let mut h = DMatrix::zeros(dim, dim);
        let log_pi = self.group_log_membership(params);
        let index = |row: usize, j: usize| if j == 0 { row } else { layout.slope_index(row, j - 1) };
        for (g, z) in self.groups.iter().enumerate() {
            let total: f64 = group_w[g * k_n..(g + 1) * k_n].iter().sum();
            if total == 0.0 {
                continue;
            }
            let pi: Vec<f64> = log_pi[g * k_n..(g + 1) * k_n].iter().map(|l| l.exp()).collect();
            let x = |j: usize| if j == 0 { 1.0 } else { z[j - 1] };
            for r in 0..k_n - 1 {
                for r2 in 0..k_n - 1 {
                    let cov = if r == r2 {
                        pi[r] - pi[r] * pi[r2]
                    } else {
                        -pi[r] * pi[r2]
                    };
                    for j in 0..=layout.slope_dim {
                        for j2 in 0..=layout.slope_dim {
                            h[(index(r, j), index(r2, j2))] -= total * cov * x(j) * x(j2);
                        }
                    }
                }
            }
        }
        h
    }

    /// `Σ_g Σ_k W_gk ln π_k(z_g)`.
    pub fn membership_objective(&self, params: &ParameterSet, group_w: &[f64]) -> f64 {
        let log_pi = self.group_log_membership(params);
        group_w
            .iter()
            .zip(&log_pi)
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, l)| w * l)
            .sum()
    }

    /// Gradient of the membership objective over the membership block.
    pub fn membership_gradient(&self, params: &ParameterSet, group_w: &[f64]) -> Vec<f64> {
        let k_n = self.n_classes();
        let layout = &self.layout;
        let mut grad = vec![0.0; layout.n_membership()];
        let log_pi = self.group_log_membership(params);
        for (g, z) in self.groups.iter().enumerate() {
            let total: f64 = group_w[g * k_n..(g + 1) * k_n].iter().sum();
            for row in 0..k_n - 1 {
                let resid = group_w[g * k_n + row] - total * log_pi[g * k_n + row].exp();
                grad[row] += resid;
                for j in 0..layout.slope_dim {
                    grad[layout.slope_index(row, j)] += resid * z[j];
                }
            }
        }
        grad
    }

    /// Gradient of the observed-data log-likelihood at `params`, given the
    /// E-step evaluated there.
    pub fn full_gradient(&self, params: &ParameterSet, state: &EState) -> Vec<f64> {
        let table = self.table(params, Order::Gradient);
        self.full_gradient_with(params, state, &table)
    }

    pub fn full_gradient_with(&self, params: &ParameterSet, state: &EState, table: &ObsTable) -> Vec<f64> {
        let agg = self.aggregate(&state.weights);
        let gw = self.group_weights(&state.weights);
        let mut grad = self.membership_gradient(params, &gw);
        grad.extend(self.measurement_gradient(table, &agg));
        grad
    }
}

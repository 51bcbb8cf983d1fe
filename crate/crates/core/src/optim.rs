//! Damped Newton maximizers over flat parameter vectors.

use nalgebra::{DMatrix, DVector};

pub(crate) trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Second derivatives; defaults to differencing the gradient.
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_hessian(self, x)
    }

    fn gradient_hessian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        (self.gradient(x), self.hessian(x))
    }
}

const RIDGE_ESCALATIONS: usize = 4;

/// Hessian by central differences of the analytic gradient, symmetrized.
pub(crate) fn fd_hessian<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for i in 0..n {
        let step = 1e-5 * x[i].abs().max(1.0);
        probe[i] = x[i] + step;
        let up = obj.gradient(&probe);
        probe[i] = x[i] - step;
        let down = obj.gradient(&probe);
        probe[i] = x[i];
        for j in 0..n {
            h[(i, j)] = (up[j] - down[j]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Solves `(-H + ridge·I) Δ = g`, raising the ridge until the system is
/// positive definite. Returns the step and the ridge that was used.
pub(crate) fn regularized_step(hessian: &DMatrix<f64>, grad: &[f64], ridge: f64) -> Option<(Vec<f64>, f64)> {
    let n = grad.len();
    let g = DVector::from_column_slice(grad);
    let scale = hessian.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut ridge = ridge;
    for _ in 0..40 {
        let mut a = -hessian.clone();
        for i in 0..n {
            a[(i, i)] += ridge;
        }
        if let Some(chol) = a.cholesky() {
            let step = chol.solve(&g);
            if step.iter().all(|v| v.is_finite()) {
                return Some((step.iter().copied().collect(), ridge));
            }
        }
        ridge = (ridge * 10.0).max(1e-10 * scale);
    }
    None
}

/// Newton ascent with step halving; never returns a point with a lower
/// objective than `x0`.
pub(crate) fn newton_ascent<O: Objective + ?Sized>(obj: &O, x0: &[f64], max_iter: usize, ridge_floor: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut value = obj.value(&x);
    if x.is_empty() || !value.is_finite() {
        return x;
    }
    for _ in 0..max_iter {
        let (grad, hessian) = obj.gradient_hessian(&x);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax <= 1e-10 * (1.0 + value.abs()) {
            break;
        }
        let scale = hessian.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let mut ridge = ridge_floor;
        let mut accepted = false;
        // a rejected Newton direction is retried with a heavier ridge, which
        // bends it towards the gradient
        for attempt in 0..RIDGE_ESCALATIONS {
            let Some((step, used)) = regularized_step(&hessian, &grad, ridge) else {
                break;
            };
            let mut factor = 1.0;
            let halvings = if attempt + 1 == RIDGE_ESCALATIONS { 30 } else { 8 };
            for _ in 0..halvings {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + factor * s).collect();
                let v = obj.value(&trial);
                if v.is_finite() && v >= value {
                    let gain = v - value;
                    x = trial;
                    value = v;
                    accepted = gain > 1e-13 * (1.0 + value.abs());
                    break;
                }
                factor *= 0.5;
            }
            if accepted {
                break;
            }
            ridge = (used * 1e3).max(1e-6 * scale);
        }
        if !accepted {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;

    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> f64 {
            -(x[0] - 1.0).powi(2) - 4.0 * (x[1] + 2.0).powi(2) - (x[0] - 1.0) * (x[1] + 2.0)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![-2.0 * (x[0] - 1.0) - (x[1] + 2.0), -8.0 * (x[1] + 2.0) - (x[0] - 1.0)]
        }
    }

    #[test]
    fn quadratic_solved_in_one_step() {
        let x = newton_ascent(&Quadratic, &[10.0, 10.0], 1, 0.0);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn ridge_rescues_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let (step, ridge) = regularized_step(&h, &[1.0, 1.0], 0.0).unwrap();
        assert!(ridge > 1.0);
        assert!(step.iter().all(|s| s.is_finite()));
    }
}

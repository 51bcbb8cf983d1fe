//! Standard normal helpers on the log scale.
//!
//! `log_cdf` follows `ln(erfc(-z/sqrt 2) / 2)` down to `z = -37` and the
//! Mills-ratio expansion below that, floored at [`LOG_PROB_FLOOR`].

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

pub const LOG_PROB_FLOOR: f64 = -745.0;
const TAIL_SWITCH: f64 = -37.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn log_pdf(z: f64) -> f64 {
    -0.5 * z * z - HALF_LN_2PI
}

#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `ln Φ(z)`, clamped at [`LOG_PROB_FLOOR`].
pub fn log_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z >= TAIL_SWITCH {
        if z > 5.0 {
            // ln(1 - Φ(-z)) without cancellation
            return (-cdf(-z)).ln_1p();
        }
        return cdf(z).ln();
    }
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    let value = -0.5 * z2 - (-z).ln() - HALF_LN_2PI + series.ln();
    value.max(LOG_PROB_FLOOR)
}

/// `φ(z) / Φ(z)`, the inverse Mills ratio, zero where `log_cdf` is clamped.
pub fn mills(z: f64) -> f64 {
    let lc = log_cdf(z);
    if lc <= LOG_PROB_FLOOR {
        return 0.0;
    }
    (log_pdf(z) - lc).exp()
}

/// `ln(Φ(b) - Φ(a))` for `a < b`, evaluated on the side of the distribution
/// that avoids cancellation.
pub fn log_interval(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return log_cdf(b);
    }
    if b == f64::INFINITY {
        return log_cdf(-a);
    }
    // reflect so the interval sits in the lower half where Φ is small
    let (lo, hi) = if a > 0.0 { (-b, -a) } else { (a, b) };
    let lhi = log_cdf(hi);
    let llo = log_cdf(lo);
    if lhi <= LOG_PROB_FLOOR {
        return LOG_PROB_FLOOR;
    }
    let diff = llo - lhi;
    let value = if diff < -0.693 {
        lhi + (-diff.exp()).ln_1p()
    } else {
        // close endpoints: integrate the density directly
        let p = cdf(hi) - cdf(lo);
        if p > 0.0 {
            p.ln()
        } else {
            let mid = 0.5 * (lo + hi);
            log_pdf(mid) + (hi - lo).ln()
        }
    };
    value.max(LOG_PROB_FLOOR)
}

pub fn quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

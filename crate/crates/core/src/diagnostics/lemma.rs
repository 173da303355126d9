//! Extremal sequence of the scalar recursion `ℰ_{k+1} ≤ ℰ_k − Cℰ_{k+1}^{2+α}`.
//!
//! Taking equality at every step gives the slowest admissible decay. The
//! oracle checks that `ℰ_k (k+1)^{1/(α+1)}` stays bounded and shows no
//! growth trend over the last decade of `k`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub c: f64,
    pub alpha: f64,
    pub e0: f64,
    /// `1/(α+1)`.
    pub rate: f64,
    #[serde(skip)]
    pub sequence: Vec<f64>,
    /// `sup_k ℰ_k (k+1)^{rate}`.
    pub fitted_m: f64,
    /// Log-log slope of `ℰ_k (k+1)^{rate}` over the last decade of `k`.
    pub tail_slope: f64,
    /// `max_k (ℰ_{k+1} + Cℰ_{k+1}^{2+α} − ℰ_k)/ℰ_k`, nonpositive up to rounding.
    pub max_violation: f64,
    pub bounded: bool,
}

/// Largest tail slope accepted as "no growth trend".
pub const TAIL_SLOPE_TOL: f64 = 0.01;

fn power(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Root of `x + Cx^{p} = e` in `[0, e]` by bisection; returns the lower end,
/// which satisfies the recursion inequality.
fn extremal_step(e: f64, c: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, e);
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if mid + c * power(mid, p) > e {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

pub fn recursion_oracle(c: f64, alpha: f64, e0: f64, steps: usize) -> Result<RecursionReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid("C", format!("must be positive, got {c}")));
    }
    if !(alpha > -1.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must exceed -1, got {alpha}")));
    }
    if !(e0 > 0.0 && e0.is_finite()) {
        return Err(invalid("E0", format!("must be positive, got {e0}")));
    }
    if steps < 10 {
        return Err(invalid("steps", "need at least ten steps for a tail trend"));
    }
    let p = 2.0 + alpha;
    let rate = 1.0 / (alpha + 1.0);
    let mut seq = Vec::with_capacity(steps + 1);
    seq.push(e0);
    let mut max_violation = f64::NEG_INFINITY;
    for k in 0..steps {
        let e = seq[k];
        let next = extremal_step(e, c, p);
        max_violation = max_violation.max((next + c * power(next, p) - e) / e);
        seq.push(next);
    }
    let scaled = |k: usize| seq[k] * ((k + 1) as f64).powf(rate);
    let fitted_m = (0..=steps).map(scaled).fold(0.0, f64::max);

    let start = steps / 10;
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in start..=steps {
        let x = ((k + 1) as f64).ln();
        let y = scaled(k).ln();
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let tail_slope = (sxy - sx * sy / n) / (sxx - sx * sx / n);
    Ok(RecursionReport {
        c,
        alpha,
        e0,
        rate,
        sequence: seq,
        fitted_m,
        tail_slope,
        max_violation,
        bounded: fitted_m.is_finite() && tail_slope.abs() <= TAIL_SLOPE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_rate_for_alpha_zero() {
        let r = recursion_oracle(1.0, 0.0, 1.0, 100_000).unwrap();
        assert!(r.bounded, "{r:?}");
        assert!(r.max_violation <= 1e-13);
        // ℰ_k ~ 1/k for x + x² = ℰ
        let last = *r.sequence.last().unwrap();
        assert!((last * 100_001.0 - 1.0).abs() < 0.01);
        assert!(r.sequence.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn square_root_rate_for_alpha_one() {
        let r = recursion_oracle(1.0, 1.0, 2.0, 100_000).unwrap();
        assert_eq!(r.rate, 0.5);
        assert!(r.bounded, "{r:?}");
        assert!(r.max_violation <= 1e-13);
    }

    #[test]
    fn vanishing_dissipation_is_flagged() {
        let r = recursion_oracle(1e-12, 0.0, 1.0, 10_000).unwrap();
        assert!(!r.bounded);
        assert!((r.tail_slope - 1.0).abs() < 1e-3);
    }

    #[test]
    fn parameter_checks() {
        assert!(recursion_oracle(0.0, 0.0, 1.0, 100).is_err());
        assert!(recursion_oracle(1.0, -1.0, 1.0, 100).is_err());
        assert!(recursion_oracle(1.0, 0.0, 0.0, 100).is_err());
    }
}

//! Scalar special functions used by the model updates.
//!
//! `ln_gamma` and `digamma` come from `statrs`; the rest are small enough to
//! carry here, together with the two monotone root solvers the M-steps need.

use crate::error::{Error, Result};

pub use statrs::function::gamma::{digamma, ln_gamma};

const SHAPE_MIN_LN: f64 = -20.0;
/// Upper bound on any shape parameter returned by [`solve_digamma_minus_ln`].
pub const SHAPE_MAX: f64 = 1e4;

/// Trigamma function ψ₁(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // 1/x + 1/2x² + Σ B₂ₙ / x^(2n+1)
    let tail = r2 * r
        * (1.0 / 6.0
            + r2 * (-1.0 / 30.0
                + r2 * (1.0 / 42.0 + r2 * (-1.0 / 30.0 + r2 * (5.0 / 66.0 - r2 * 691.0 / 2730.0)))));
    acc + r + 0.5 * r2 + tail
}

/// ψ(u) − ln u without the cancellation that plagues the direct difference
/// for large `u`. Always negative.
pub fn digamma_minus_ln(u: f64) -> f64 {
    let mut shift = 0.0;
    let mut x = u;
    if x < 10.0 {
        let n = (10.0 - x).ceil();
        for j in 0..n as usize {
            shift -= 1.0 / (u + j as f64);
        }
        x = u + n;
        shift += (x / u).ln();
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = -0.5 * r
        - r2 * (1.0 / 12.0
            + r2 * (-1.0 / 120.0
                + r2 * (1.0 / 252.0
                    + r2 * (-1.0 / 240.0 + r2 * (1.0 / 132.0 - r2 * 691.0 / 32760.0)))));
    series + shift
}

/// Result of solving ψ(u) − ln u = c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSolution {
    pub value: f64,
    /// Set when the root lies outside the search interval and the value was
    /// pinned to a bound instead.
    pub pinned: bool,
}

/// Solves ψ(u) − ln u = c for u by bracketed Newton on ln u.
///
/// The left-hand side increases monotonically towards 0, so there is no root
/// for c ≥ 0; in that case (and when the root exceeds [`SHAPE_MAX`]) the
/// result is pinned to the upper bound and a warning is logged.
pub fn solve_digamma_minus_ln(c: f64) -> Result<ShapeSolution> {
    if !c.is_finite() {
        return Err(Error::numerical(format!("shape equation target is {c}")));
    }
    let mut lo = SHAPE_MIN_LN;
    let mut hi = SHAPE_MAX.ln();
    if c >= digamma_minus_ln(SHAPE_MAX) {
        log::warn!("shape equation target {c:.3e} has no root below {SHAPE_MAX}; pinning");
        return Ok(ShapeSolution { value: SHAPE_MAX, pinned: true });
    }
    if c <= digamma_minus_ln(lo.exp()) {
        log::warn!("shape equation target {c:.3e} below search range; pinning");
        return Ok(ShapeSolution { value: lo.exp(), pinned: true });
    }
    let tol = 1e-13 * c.abs().max(1.0);
    let mut s = (-0.5 / c).ln().clamp(lo, hi);
    for _ in 0..200 {
        let u = s.exp();
        let resid = digamma_minus_ln(u) - c;
        if resid.abs() <= tol {
            break;
        }
        if resid < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let slope = u * trigamma(u) - 1.0;
        let mut next = s - resid / slope;
        if !(next > lo && next < hi) || !slope.is_finite() || slope <= 0.0 {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 4.0 * f64::EPSILON * s.abs().max(1.0) {
            s = next;
            break;
        }
        s = next;
    }
    Ok(ShapeSolution { value: s.exp(), pinned: false })
}

/// Inverse of the digamma function on (0, ∞).
pub fn inverse_digamma(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::numerical(format!("digamma target is {y}")));
    }
    let mut lo = 1e-14_f64;
    let mut hi = 1e12_f64;
    if y <= digamma(lo) || y >= digamma(hi) {
        return Err(Error::numerical(format!("digamma target {y} out of range")));
    }
    // Minka's starting point.
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + 0.577_215_664_901_532_9)
    };
    x = x.clamp(lo, hi);
    for _ in 0..200 {
        let resid = digamma(x) - y;
        if resid.abs() <= 1e-14 * y.abs().max(1.0) {
            break;
        }
        if resid < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - resid / trigamma(x);
        if !(next > lo && next < hi) {
            next = (lo * hi).sqrt();
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

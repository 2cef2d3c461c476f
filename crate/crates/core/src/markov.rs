//! Discrete-state Markov chain utilities shared by the speech and babble
//! models: stationary distributions and scaled forward-backward.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Allowed deviation of a transition-matrix row sum from one.
pub const ROW_TOL: f64 = 1e-12;
const SCALE_FLOOR: f64 = 1e-300;

pub fn check_row_stochastic(trans: ArrayView2<f64>) -> Result<()> {
    if trans.nrows() != trans.ncols() || trans.nrows() == 0 {
        return Err(Error::input(format!("transition matrix has shape {:?}", trans.dim())));
    }
    for (i, row) in trans.rows().into_iter().enumerate() {
        if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::input(format!("transition row {i} has a negative or non-finite entry")));
        }
        let s = row.sum();
        if (s - 1.0).abs() > ROW_TOL {
            return Err(Error::input(format!("transition row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Rows scaled to sum to one; all-zero rows become uniform.
pub fn normalize_rows(counts: &Array2<f64>) -> Array2<f64> {
    let n = counts.ncols();
    let mut out = counts.clone();
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / n as f64);
        }
    }
    out
}

/// Stationary distribution by power iteration on the lazy chain (P + I)/2,
/// which shares P's stationary vector but cannot oscillate.
pub fn stationary(trans: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_row_stochastic(trans)?;
    let n = trans.nrows();
    let mut p = Array1::from_elem(n, 1.0 / n as f64);
    for _ in 0..1_000_000 {
        let mut next = 0.5 * (&p.dot(&trans) + &p);
        next /= next.sum();
        let delta: f64 = (&next - &p).mapv(f64::abs).sum();
        p = next;
        if delta < 1e-12 {
            return Ok(p);
        }
    }
    log::warn!("stationary distribution did not converge");
    Ok(p)
}

/// Smoothed state posteriors of one sequence.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `state[[t, i]]` = P(state i at t | all observations).
    pub state: Array2<f64>,
    /// Σ_t P(state i at t−1, state j at t | all observations).
    pub pair_counts: Array2<f64>,
    pub loglik: f64,
}

/// Scaled forward-backward over `loglik[[t, i]]` = ln f(o_t | state i).
pub fn forward_backward(trans: ArrayView2<f64>, initial: ArrayView1<f64>, loglik: ArrayView2<f64>) -> Result<Posteriors> {
    check_row_stochastic(trans)?;
    let (t_len, n) = loglik.dim();
    if n != trans.nrows() || initial.len() != n {
        return Err(Error::input(format!(
            "likelihood has {n} states, transition matrix {}, initial vector {}",
            trans.nrows(),
            initial.len()
        )));
    }
    if let Some(v) = loglik.iter().find(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("non-finite state log-likelihood {v}")));
    }
    if t_len == 0 {
        return Ok(Posteriors { state: Array2::zeros((0, n)), pair_counts: Array2::zeros((n, n)), loglik: 0.0 });
    }
    // emission likelihoods shifted per frame so the largest is 1
    let mut emis = loglik.to_owned();
    let mut shift = Array1::zeros(t_len);
    for (t, mut row) in emis.rows_mut().into_iter().enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        shift[t] = m;
        row.mapv_inplace(|v| (v - m).exp());
    }
    let mut alpha = Array2::zeros((t_len, n));
    let mut scale = Array1::zeros(t_len);
    let mut prev = &initial * &emis.row(0);
    for t in 0..t_len {
        if t > 0 {
            prev = &alpha.row(t - 1).dot(&trans) * &emis.row(t);
        }
        let c = prev.sum().max(SCALE_FLOOR);
        scale[t] = c;
        alpha.row_mut(t).assign(&(&prev / c));
    }
    let mut beta = Array2::zeros((t_len, n));
    beta.row_mut(t_len - 1).fill(1.0);
    let mut pair_counts = Array2::zeros((n, n));
    for t in (1..t_len).rev() {
        let weighted = &emis.row(t) * &beta.row(t) / scale[t];
        let b = trans.dot(&weighted);
        beta.row_mut(t - 1).assign(&b);
        let a = alpha.row(t - 1);
        for i in 0..n {
            for j in 0..n {
                pair_counts[[i, j]] += a[i] * trans[[i, j]] * weighted[j];
            }
        }
    }
    let mut state = alpha * beta;
    for mut row in state.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let loglik = scale.mapv(f64::ln).sum() + shift.sum();
    Ok(Posteriors { state, pair_counts, loglik })
}

/// Softmax of a log-weight vector; falls back to uniform when every entry is
/// −∞ or NaN. Returns the weights and whether the fallback was taken.
pub fn normalize_log_weights(logw: ArrayView1<f64>) -> (Array1<f64>, bool) {
    let m = logw.iter().cloned().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        let n = logw.len();
        return (Array1::from_elem(n, 1.0 / n as f64), true);
    }
    let mut w = logw.mapv(|v| if v.is_nan() { 0.0 } else { (v - m).exp() });
    let s = w.sum();
    w /= s;
    (w, false)
}

/// Row sums of pair counts, handy for transition re-estimation.
pub fn occupancy(post: &Posteriors) -> Array1<f64> {
    post.state.sum_axis(Axis(0))
}

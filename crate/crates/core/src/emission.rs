//! Gain-marginalised gamma emissions.
//!
//! Each state owns a column c_i of per-bin scales; an observation column o is
//! Gamma(shape_k, g·c_ki) in every bin given a gain g ~ Gamma(φ, θ). The gain
//! integrates out in closed form through a Bessel K function, and its
//! posterior is GIG(φ − Σshape, 1/θ, Σ_k o_k/c_ki).

use crate::bessel::ln_bessel_k_scaled;
use crate::error::{Error, Result};
use crate::gig::{gig_mean, gig_moments, GigMoments, GigParams};
use crate::special::ln_gamma;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rayon::prelude::*;
use std::f64::consts::LN_2;

/// Skip gain moments for states whose posterior weight is below this.
pub(crate) const WEIGHT_EPS: f64 = 1e-15;

#[derive(Debug, Clone)]
pub(crate) struct GammaEmission {
    inv_cols: Array2<f64>,
    state_const: Array1<f64>,
    shape_minus_one: Array1<f64>,
    order: f64,
    gain_shape: f64,
    ln_gamma_gain: f64,
}

impl GammaEmission {
    pub fn new(columns: ArrayView2<f64>, shape: ArrayView1<f64>, gain_shape: f64) -> Result<Self> {
        if let Some(((k, i), v)) = columns.indexed_iter().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::input(format!("state {i} has non-positive scale {v} in bin {k}")));
        }
        let lgs: f64 = shape.iter().map(|&a| ln_gamma(a)).sum();
        let state_const = columns
            .columns()
            .into_iter()
            .map(|c| -shape.iter().zip(c.iter()).map(|(a, b)| a * b.ln()).sum::<f64>() - lgs)
            .collect();
        Ok(GammaEmission {
            inv_cols: columns.mapv(|v| 1.0 / v),
            state_const,
            shape_minus_one: shape.mapv(|a| a - 1.0),
            order: gain_shape - shape.sum(),
            gain_shape,
            ln_gamma_gain: ln_gamma(gain_shape),
        })
    }

    pub fn n_states(&self) -> usize {
        self.inv_cols.ncols()
    }

    pub fn n_bins(&self) -> usize {
        self.inv_cols.nrows()
    }

    /// τ[[t, i]] = Σ_k o_kt / c_ki.
    pub fn tau(&self, power: ArrayView2<f64>) -> Array2<f64> {
        power.t().dot(&self.inv_cols)
    }

    fn check_power(&self, power: ArrayView2<f64>) -> Result<()> {
        if power.nrows() != self.n_bins() {
            return Err(Error::input(format!("observation has {} bins, model has {}", power.nrows(), self.n_bins())));
        }
        if let Some(((k, t), v)) = power.indexed_iter().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::input(format!("observation bin {k} of frame {t} is {v}; floor powers first")));
        }
        Ok(())
    }

    /// Log-likelihood matrix `[[t, i]]` and the matching τ matrix.
    pub fn loglik(&self, level: f64, power: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_power(power)?;
        if !(level > 0.0) || !level.is_finite() {
            return Err(Error::input(format!("gain scale {level} must be positive")));
        }
        let tau = self.tau(power);
        let data_term: Array1<f64> = power
            .columns()
            .into_iter()
            .map(|o| o.iter().zip(self.shape_minus_one.iter()).map(|(v, a)| a * v.ln()).sum())
            .collect();
        let nu = self.order;
        let ln_level = level.ln();
        let base = LN_2 - self.gain_shape * ln_level - self.ln_gamma_gain;
        let n = self.n_states();
        let rows: Vec<Result<Vec<f64>>> = (0..tau.nrows())
            .into_par_iter()
            .map(|t| {
                (0..n)
                    .map(|i| {
                        let tv = tau[[t, i]];
                        let x = 2.0 * (tv / level).sqrt();
                        let ll = base
                            + 0.5 * nu * (tv.ln() + ln_level)
                            + ln_bessel_k_scaled(nu, x)?
                            - x
                            + data_term[t]
                            + self.state_const[i];
                        if !ll.is_finite() {
                            return Err(Error::numerical(format!("state {i} log-likelihood is {ll} at frame {t}")));
                        }
                        Ok(ll)
                    })
                    .collect()
            })
            .collect();
        let mut out = Array2::zeros(tau.dim());
        for (t, row) in rows.into_iter().enumerate() {
            for (i, v) in row?.into_iter().enumerate() {
                out[[t, i]] = v;
            }
        }
        Ok((out, tau))
    }

    pub fn gain_posterior(&self, level: f64, tau: f64) -> GigParams {
        GigParams { order: self.order, rate: 1.0 / level, tau }
    }

    /// Gain moments for every (frame, state) whose weight is not negligible;
    /// the others are left as zeros.
    pub fn moments(&self, level: f64, tau: &Array2<f64>, weights: &Array2<f64>) -> Result<Vec<Vec<GigMoments>>> {
        let zero = GigMoments { mean: 0.0, mean_inv: 0.0, mean_ln: 0.0 };
        (0..tau.nrows())
            .into_par_iter()
            .map(|t| {
                (0..tau.ncols())
                    .map(|i| {
                        if weights[[t, i]] < WEIGHT_EPS {
                            Ok(zero)
                        } else {
                            gig_moments(&self.gain_posterior(level, tau[[t, i]]))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// ω ⊙ E(G) as a `[[t, i]]` matrix.
    pub fn weighted_mean_gain(&self, level: f64, tau: &Array2<f64>, weights: &Array2<f64>) -> Result<Array2<f64>> {
        let rows: Vec<Result<Vec<f64>>> = (0..tau.nrows())
            .into_par_iter()
            .map(|t| {
                (0..tau.ncols())
                    .map(|i| {
                        let w = weights[[t, i]];
                        if w < WEIGHT_EPS {
                            Ok(0.0)
                        } else {
                            Ok(w * gig_mean(&self.gain_posterior(level, tau[[t, i]]))?)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = Array2::zeros(tau.dim());
        for (t, row) in rows.into_iter().enumerate() {
            for (i, v) in row?.into_iter().enumerate() {
                out[[t, i]] = v;
            }
        }
        Ok(out)
    }
}

/// Sufficient statistics of one sequence under a gamma emission model.
#[derive(Debug, Clone)]
pub(crate) struct SequenceStats {
    pub loglik: f64,
    pub pair_counts: Array2<f64>,
    /// Σ_t ω_ti.
    pub occupancy: Array1<f64>,
    /// Σ_t ω_ti·o_kt·E(1/G | t, i), K × N.
    pub weighted_obs: Array2<f64>,
    /// Σ_t Σ_i ω_ti·E(ln G | t, i).
    pub sum_ln_gain: f64,
    /// Σ_t Σ_i ω_ti·E(G | t, i).
    pub sum_gain: f64,
    /// Σ_t ln o_kt.
    pub sum_ln_obs: Array1<f64>,
    pub n_frames: usize,
}

impl GammaEmission {
    pub fn sequence_stats(&self, trans: ArrayView2<f64>, initial: ArrayView1<f64>, level: f64, power: ArrayView2<f64>) -> Result<SequenceStats> {
        let (ll, tau) = self.loglik(level, power)?;
        let post = crate::markov::forward_backward(trans, initial, ll.view())?;
        let moments = self.moments(level, &tau, &post.state)?;
        let (t_len, n) = post.state.dim();
        let mut inv_w = Array2::zeros((t_len, n));
        let mut sum_ln_gain = 0.0;
        let mut sum_gain = 0.0;
        for t in 0..t_len {
            for i in 0..n {
                let w = post.state[[t, i]];
                if w < WEIGHT_EPS {
                    continue;
                }
                let m = &moments[t][i];
                inv_w[[t, i]] = w * m.mean_inv;
                sum_ln_gain += w * m.mean_ln;
                sum_gain += w * m.mean;
            }
        }
        let mut sum_ln_obs = Array1::zeros(power.nrows());
        Zip::from(&mut sum_ln_obs).and(power.rows()).for_each(|s, row| *s = row.iter().map(|v| v.ln()).sum());
        Ok(SequenceStats {
            loglik: post.loglik,
            occupancy: post.state.sum_axis(ndarray::Axis(0)),
            pair_counts: post.pair_counts,
            weighted_obs: power.dot(&inv_w),
            sum_ln_gain,
            sum_gain,
            sum_ln_obs,
            n_frames: t_len,
        })
    }
}

/// Element-wise sum of per-sequence statistics, in sequence order.
pub(crate) fn merge_stats(parts: &[SequenceStats]) -> (f64, Array2<f64>, Array1<f64>, Array2<f64>, f64, Array1<f64>, usize) {
    let first = &parts[0];
    let mut ll = 0.0;
    let mut pairs = Array2::zeros(first.pair_counts.dim());
    let mut occ = Array1::zeros(first.occupancy.len());
    let mut wobs = Array2::zeros(first.weighted_obs.dim());
    let mut lng = 0.0;
    let mut lno = Array1::zeros(first.sum_ln_obs.len());
    let mut frames = 0;
    for p in parts {
        ll += p.loglik;
        pairs += &p.pair_counts;
        occ += &p.occupancy;
        wobs += &p.weighted_obs;
        lng += p.sum_ln_gain;
        lno += &p.sum_ln_obs;
        frames += p.n_frames;
    }
    (ll, pairs, occ, wobs, lng, lno, frames)
}

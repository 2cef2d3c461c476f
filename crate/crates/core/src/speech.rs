//! Ergodic gamma-HMM of speech power spectra.
//!
//! State i emits per-bin powers o_k ~ Gamma(α_k, g·b_ki) where the gain g is
//! itself Gamma(φ, θ) with θ fixed per utterance. Training is exact EM over
//! the joint (state, gain) posterior.

use crate::emission::{merge_stats, GammaEmission, SequenceStats};
use crate::error::{Error, Result};
use crate::gig::GigParams;
use crate::kmeans::kmeans;
use crate::markov::{self, Posteriors};
use crate::special::solve_digamma_minus_ln;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// States whose total posterior weight falls below this keep their columns.
pub const EMPTY_STATE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechHmm {
    /// N × N row-stochastic transition matrix.
    pub trans: Array2<f64>,
    /// K × N per-state scale columns.
    pub basis: Array2<f64>,
    /// Per-bin gamma shape, length K.
    pub shape: Array1<f64>,
    /// Shape of the gamma gain prior.
    pub gain_shape: f64,
}

/// Probabilistic-NMF view of a spectrogram under a model.
#[derive(Debug, Clone)]
pub struct Projection {
    /// N × T non-negative activations.
    pub coeffs: Array2<f64>,
    /// K × T reconstruction `basis · coeffs`.
    pub approx: Array2<f64>,
}

impl SpeechHmm {
    pub fn new(trans: Array2<f64>, basis: Array2<f64>, shape: Array1<f64>, gain_shape: f64) -> Result<Self> {
        let m = SpeechHmm { trans, basis, shape, gain_shape };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        markov::check_row_stochastic(self.trans.view())?;
        let (k, n) = self.basis.dim();
        if n != self.trans.nrows() || k != self.shape.len() || k == 0 {
            return Err(Error::input(format!(
                "inconsistent dimensions: basis {:?}, transitions {:?}, shape {}",
                self.basis.dim(),
                self.trans.dim(),
                self.shape.len()
            )));
        }
        if self.basis.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::input("basis entries must be positive and finite"));
        }
        if self.shape.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::input("shape parameters must be positive and finite"));
        }
        if !(self.gain_shape > 0.0) || !self.gain_shape.is_finite() {
            return Err(Error::input(format!("gain shape {} must be positive", self.gain_shape)));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n_bins(&self) -> usize {
        self.basis.nrows()
    }

    /// Stationary state distribution of the transition matrix.
    pub fn initial(&self) -> Result<Array1<f64>> {
        markov::stationary(self.trans.view())
    }

    /// NMF basis α⊙b_i: the conditional mean spectrum of state i at unit gain.
    pub fn nmf_basis(&self) -> Array2<f64> {
        &self.basis * &self.shape.view().insert_axis(Axis(1))
    }

    pub(crate) fn emission(&self) -> Result<GammaEmission> {
        GammaEmission::new(self.basis.view(), self.shape.view(), self.gain_shape)
    }

    /// ln f(o | state i) for every state with the gain integrated out.
    pub fn state_loglik(&self, level: f64, obs: ArrayView1<f64>) -> Result<Array1<f64>> {
        let col = obs.insert_axis(Axis(1));
        let (ll, _) = self.emission()?.loglik(level, col)?;
        Ok(ll.row(0).to_owned())
    }

    /// `[[t, i]]` log-likelihoods for a K × T power spectrogram.
    pub fn loglik_matrix(&self, level: f64, power: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.emission()?.loglik(level, power)?.0)
    }

    pub fn gain_posterior(&self, level: f64, obs: ArrayView1<f64>, state: usize) -> GigParams {
        let tau = obs.iter().zip(self.basis.column(state).iter()).map(|(o, b)| o / b).sum();
        GigParams { order: self.gain_shape - self.shape.sum(), rate: 1.0 / level, tau }
    }

    pub fn forward_backward(&self, loglik: ArrayView2<f64>) -> Result<Posteriors> {
        markov::forward_backward(self.trans.view(), self.initial()?.view(), loglik)
    }

    /// u_t(i) = ω_t(i)·E(G | i, o_t) and the reconstruction (α⊙b)·u.
    pub fn nmf_project(&self, level: f64, power: ArrayView2<f64>) -> Result<Projection> {
        let em = self.emission()?;
        let (ll, tau) = em.loglik(level, power)?;
        let post = self.forward_backward(ll.view())?;
        let coeffs = em.weighted_mean_gain(level, &tau, &post.state)?.reversed_axes();
        let approx = self.nmf_basis().dot(&coeffs);
        Ok(Projection { coeffs, approx })
    }

    /// Gain scale of one utterance by EM with the other parameters fixed.
    pub fn estimate_level(&self, power: ArrayView2<f64>, iters: usize) -> Result<f64> {
        let em = self.emission()?;
        let mean_col = self.nmf_basis().mean().unwrap_or(1.0);
        let mut level = power.mean().unwrap_or(1.0) / (self.gain_shape * mean_col);
        for _ in 0..iters {
            let (ll, tau) = em.loglik(level, power)?;
            let post = self.forward_backward(ll.view())?;
            let g = em.weighted_mean_gain(level, &tau, &post.state)?;
            let next = g.sum() / (power.ncols() as f64 * self.gain_shape);
            let done = (next - level).abs() <= 1e-9 * level;
            level = next;
            if done {
                break;
            }
        }
        Ok(level)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SpeechTrainConfig {
    pub n_states: usize,
    pub n_iters: usize,
    pub seed: u64,
    pub init_gain_shape: f64,
    pub kmeans_restarts: usize,
}

impl Default for SpeechTrainConfig {
    fn default() -> Self {
        SpeechTrainConfig { n_states: 55, n_iters: 20, seed: 0, init_gain_shape: 15.0, kmeans_restarts: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSpeech {
    pub model: SpeechHmm,
    /// Gain scale θ_r per utterance.
    pub levels: Vec<f64>,
    /// Data log-likelihood before each iteration and after the last one.
    pub loglik_trace: Vec<f64>,
    /// Shape solves that had no interior root and were pinned.
    pub pinned_solves: usize,
    /// Iterations whose likelihood fell by more than the tolerance.
    pub violations: usize,
}

/// Relative tolerance on likelihood decreases between EM iterations.
pub const MONOTONE_TOL: f64 = 1e-8;

pub(crate) fn check_corpus(corpus: &[Array2<f64>], n_bins: Option<usize>) -> Result<usize> {
    let first = corpus.first().ok_or_else(|| Error::input("training corpus is empty"))?;
    let k = n_bins.unwrap_or(first.nrows());
    for (r, p) in corpus.iter().enumerate() {
        if p.nrows() != k {
            return Err(Error::input(format!("sequence {r} has {} bins, expected {k}", p.nrows())));
        }
        if p.ncols() < 2 {
            return Err(Error::input(format!("sequence {r} has fewer than two frames")));
        }
        if p.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::input(format!("sequence {r} has non-positive power; floor it first")));
        }
    }
    Ok(k)
}

/// Re-estimated transitions; rows without counts keep their old values.
pub(crate) fn reestimate_trans(old: &Array2<f64>, counts: &Array2<f64>) -> Array2<f64> {
    let mut out = old.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let s = counts.row(i).sum();
        if s > 1e-300 {
            row.assign(&(&counts.row(i) / s));
        }
    }
    out
}

/// Gamma gain prior update shared by both models: the shape by the
/// digamma-log equation, then θ_r = mean gain / shape.
pub(crate) fn update_gain(parts: &[SequenceStats]) -> Result<(f64, Vec<f64>, bool)> {
    let total: f64 = parts.iter().map(|p| p.n_frames as f64).sum();
    let means: Vec<f64> = parts.iter().map(|p| p.sum_gain / p.n_frames as f64).collect();
    let c = parts
        .iter()
        .zip(&means)
        .map(|(p, m)| p.sum_ln_gain - p.n_frames as f64 * m.ln())
        .sum::<f64>()
        / total;
    let sol = solve_digamma_minus_ln(c)?;
    Ok((sol.value, means.iter().map(|m| m / sol.value).collect(), sol.pinned))
}

/// Trains a speech model on floored K × T power spectrograms.
pub fn train(corpus: &[Array2<f64>], cfg: &SpeechTrainConfig) -> Result<TrainedSpeech> {
    let k = check_corpus(corpus, None)?;
    let n = cfg.n_states;
    let total_frames: usize = corpus.iter().map(|p| p.ncols()).sum();
    if n == 0 || total_frames < n {
        return Err(Error::input(format!("{total_frames} frames cannot support {n} states")));
    }
    // k-means on log spectra for the initial columns
    let mut logs = Array2::zeros((total_frames, k));
    let mut row = 0;
    for p in corpus {
        for col in p.columns() {
            logs.row_mut(row).assign(&col.mapv(f64::ln));
            row += 1;
        }
    }
    let clusters = kmeans(logs.view(), n, cfg.seed, cfg.kmeans_restarts)?;
    let basis = clusters.centroids.t().mapv(f64::exp);
    let shape = Array1::ones(k);
    let gain_shape = cfg.init_gain_shape;
    let mean_col = basis.sum_axis(Axis(0)).mean().unwrap() / k as f64;
    let mut levels: Vec<f64> = corpus.iter().map(|p| p.mean().unwrap() / (gain_shape * mean_col)).collect();
    let mut model = SpeechHmm::new(Array2::from_elem((n, n), 1.0 / n as f64), basis, shape, gain_shape)?;

    let mut trace = Vec::with_capacity(cfg.n_iters + 1);
    let mut pinned = 0;
    let mut violations = 0;
    for iter in 0..=cfg.n_iters {
        let em = model.emission()?;
        let initial = model.initial()?;
        let parts: Vec<SequenceStats> = corpus
            .par_iter()
            .zip(levels.par_iter())
            .map(|(p, &lvl)| em.sequence_stats(model.trans.view(), initial.view(), lvl, p.view()))
            .collect::<Result<_>>()?;
        let (ll, pairs, occ, wobs, lng, lno, frames) = merge_stats(&parts);
        if let Some(&prev) = trace.last() {
            if ll < prev - MONOTONE_TOL * f64::abs(prev) {
                violations += 1;
                log::warn!("iteration {iter}: log-likelihood fell from {prev} to {ll}");
            }
        }
        log::info!("speech EM iteration {iter}: log-likelihood {ll:.6}");
        trace.push(ll);
        if iter == cfg.n_iters {
            break;
        }

        // mean of o·E(1/G) per state and bin; empty states keep their columns
        let mut mu = model.nmf_basis();
        for i in 0..n {
            if occ[i] >= EMPTY_STATE {
                mu.column_mut(i).assign(&(&wobs.column(i) / occ[i]));
            }
        }
        let mut shape = Array1::zeros(k);
        for kk in 0..k {
            let weighted_ln_mu: f64 = (0..n).map(|i| occ[i] * mu[[kk, i]].ln()).sum();
            let c = (lno[kk] - lng - weighted_ln_mu) / frames as f64;
            let sol = solve_digamma_minus_ln(c)?;
            pinned += sol.pinned as usize;
            shape[kk] = sol.value;
        }
        let mut basis = model.basis.clone();
        for i in 0..n {
            if occ[i] >= EMPTY_STATE {
                basis.column_mut(i).assign(&(&mu.column(i) / &shape));
            }
        }
        let (gs, lv, gain_pinned) = update_gain(&parts)?;
        pinned += gain_pinned as usize;
        levels = lv;
        model = SpeechHmm::new(reestimate_trans(&model.trans, &pairs), basis, shape, gs)?;
    }
    Ok(TrainedSpeech { model, levels, loglik_trace: trace, pinned_solves: pinned, violations })
}

//! Gamma nonnegative-HMM of babble.
//!
//! Babble shares the speech basis b. Instead of indicator states, state j
//! holds a non-negative weight vector s_j over the speech columns, so its
//! scale column is b·s_j. Weight vectors are fitted inside EM by the
//! concave-convex procedure.

use crate::emission::{GammaEmission, SequenceStats};
use crate::error::{Error, Result};
use crate::gig::GigParams;
use crate::kmeans::kmeans;
use crate::markov::{self, Posteriors};
use crate::projected_newton::{minimize, BoxObjective};
use crate::special::inverse_digamma;
use crate::speech::{check_corpus, reestimate_trans, update_gain, Projection, SpeechHmm, EMPTY_STATE};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Above this many states training still works but gets slow.
pub const STATE_WARN: usize = 10;
pub const MAX_STATES: usize = 200;
/// Relative tolerance on likelihood decreases between babble EM iterations.
pub const MONOTONE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BabbleNhmm {
    /// M × M row-stochastic transition matrix.
    pub trans: Array2<f64>,
    /// N × M; column j is the weight vector of state j over the speech basis.
    pub state_values: Array2<f64>,
    /// Per-bin gamma shape, length K.
    pub shape: Array1<f64>,
    pub gain_shape: f64,
}

impl BabbleNhmm {
    pub fn new(trans: Array2<f64>, state_values: Array2<f64>, shape: Array1<f64>, gain_shape: f64, basis: ArrayView2<f64>) -> Result<Self> {
        let m = BabbleNhmm { trans, state_values, shape, gain_shape };
        m.validate(basis)?;
        Ok(m)
    }

    pub fn validate(&self, basis: ArrayView2<f64>) -> Result<()> {
        markov::check_row_stochastic(self.trans.view())?;
        if self.state_values.ncols() != self.trans.nrows() {
            return Err(Error::input(format!(
                "{} state vectors for {} states",
                self.state_values.ncols(),
                self.trans.nrows()
            )));
        }
        if self.state_values.nrows() != basis.ncols() || self.shape.len() != basis.nrows() {
            return Err(Error::input(format!(
                "babble model ({} weights, {} bins) does not fit a {}×{} basis",
                self.state_values.nrows(),
                self.shape.len(),
                basis.nrows(),
                basis.ncols()
            )));
        }
        if self.state_values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::input("state vectors must be non-negative and finite"));
        }
        if self.shape.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !(self.gain_shape > 0.0) {
            return Err(Error::input("shape parameters must be positive"));
        }
        let cols = self.columns(basis);
        if let Some(((k, j), _)) = cols.indexed_iter().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::input(format!("state {j} has zero scale in bin {k}")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.trans.nrows()
    }

    /// K × M scale columns b·s_j.
    pub fn columns(&self, basis: ArrayView2<f64>) -> Array2<f64> {
        basis.dot(&self.state_values)
    }

    /// Mean spectra β⊙(b·s_j) at unit gain.
    pub fn nmf_basis(&self, basis: ArrayView2<f64>) -> Array2<f64> {
        self.columns(basis) * &self.shape.view().insert_axis(Axis(1))
    }

    pub fn initial(&self) -> Result<Array1<f64>> {
        markov::stationary(self.trans.view())
    }

    pub(crate) fn emission(&self, basis: ArrayView2<f64>) -> Result<GammaEmission> {
        GammaEmission::new(self.columns(basis).view(), self.shape.view(), self.gain_shape)
    }

    /// ln f(o | state j) with the babble gain integrated out.
    pub fn state_loglik(&self, basis: ArrayView2<f64>, level: f64, obs: ArrayView1<f64>) -> Result<Array1<f64>> {
        let (ll, _) = self.emission(basis)?.loglik(level, obs.insert_axis(Axis(1)))?;
        Ok(ll.row(0).to_owned())
    }

    pub fn loglik_matrix(&self, basis: ArrayView2<f64>, level: f64, power: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.emission(basis)?.loglik(level, power)?.0)
    }

    pub fn gain_posterior(&self, basis: ArrayView2<f64>, level: f64, obs: ArrayView1<f64>, state: usize) -> GigParams {
        let col = basis.dot(&self.state_values.column(state));
        let tau = obs.iter().zip(col.iter()).map(|(o, c)| o / c).sum();
        GigParams { order: self.gain_shape - self.shape.sum(), rate: 1.0 / level, tau }
    }

    pub fn forward_backward(&self, loglik: ArrayView2<f64>) -> Result<Posteriors> {
        markov::forward_backward(self.trans.view(), self.initial()?.view(), loglik)
    }

    /// Babble analogue of the speech NMF projection: activations ω⊙E(H) over
    /// babble states and the reconstruction Σ_j activation·β⊙(b·s_j).
    pub fn project(&self, basis: ArrayView2<f64>, level: f64, power: ArrayView2<f64>) -> Result<Projection> {
        let em = self.emission(basis)?;
        let (ll, tau) = em.loglik(level, power)?;
        let post = self.forward_backward(ll.view())?;
        let coeffs = em.weighted_mean_gain(level, &tau, &post.state)?.reversed_axes();
        let approx = self.nmf_basis(basis).dot(&coeffs);
        Ok(Projection { coeffs, approx })
    }

    /// Gain scale of one recording by EM with everything else fixed.
    pub fn estimate_level(&self, basis: ArrayView2<f64>, power: ArrayView2<f64>, iters: usize) -> Result<f64> {
        let em = self.emission(basis)?;
        let mean_col = self.nmf_basis(basis).mean().unwrap_or(1.0);
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

/// Occupancy-weighted statistics for the shape update.
#[derive(Debug, Clone)]
pub struct BetaStats {
    /// Σ_{t,j} ω_tj (ln o_kt − ln[b s_j]_k − E ln H_tj), length K.
    pub weighted_log_residual: Array1<f64>,
    pub total_weight: f64,
}

/// β_k solving ψ(β_k) = weighted mean log residual of bin k.
pub fn update_beta(stats: &BetaStats) -> Result<Array1<f64>> {
    if !(stats.total_weight > 0.0) {
        return Err(Error::numerical("shape update with zero total weight"));
    }
    stats
        .weighted_log_residual
        .iter()
        .map(|r| inverse_digamma(r / stats.total_weight))
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

/// Statistics of one babble state for its weight-vector update.
#[derive(Debug, Clone)]
pub struct CccpStats {
    /// W = Σ_t ω_t.
    pub occupancy: f64,
    /// S_k = Σ_t ω_t·o_kt·E(1/H | t), length K.
    pub weighted_obs: Array1<f64>,
}

/// −Q for one state's weight vector x, split as convex P₁ plus concave P₂:
/// P₁(x) = Σ_k S_k/[bx]_k and P₂(x) = W Σ_k β_k ln[bx]_k.
#[derive(Debug, Clone, Copy)]
pub struct CccpProblem<'a> {
    pub basis: ArrayView2<'a, f64>,
    pub shape: ArrayView1<'a, f64>,
    pub stats: &'a CccpStats,
}

impl CccpProblem<'_> {
    fn mix(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.basis.dot(&x)
    }

    pub fn convex_part(&self, x: ArrayView1<f64>) -> f64 {
        let bx = self.mix(x);
        if bx.iter().any(|v| !(*v > 0.0)) {
            return f64::INFINITY;
        }
        self.stats.weighted_obs.iter().zip(bx.iter()).map(|(s, v)| s / v).sum()
    }

    pub fn concave_part(&self, x: ArrayView1<f64>) -> f64 {
        let bx = self.mix(x);
        self.stats.occupancy * self.shape.iter().zip(bx.iter()).map(|(b, v)| b * v.ln()).sum::<f64>()
    }

    /// −Q(x) up to a constant.
    pub fn neg_q(&self, x: ArrayView1<f64>) -> f64 {
        let p1 = self.convex_part(x);
        if p1.is_infinite() {
            return p1;
        }
        p1 + self.concave_part(x)
    }

    /// ∇P₂(x) = W Σ_k β_k b_k / [bx]_k.
    pub fn concave_gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let bx = self.mix(x);
        let w = &self.shape.to_owned() / &bx * self.stats.occupancy;
        self.basis.t().dot(&w)
    }

    /// Linearised objective C(x) = P₁(x) + xᵀ·∇P₂(anchor).
    pub fn surrogate(&self, x: ArrayView1<f64>, anchor_grad: ArrayView1<f64>) -> f64 {
        self.convex_part(x) + x.dot(&anchor_grad)
    }

    /// ∇C(x) = ∇P₂(anchor) − Σ_k b_k S_k / [bx]_k².
    pub fn surrogate_gradient(&self, x: ArrayView1<f64>, anchor_grad: ArrayView1<f64>) -> Array1<f64> {
        let bx = self.mix(x);
        let w: Array1<f64> = self.stats.weighted_obs.iter().zip(bx.iter()).map(|(s, v)| s / (v * v)).collect();
        &anchor_grad - &self.basis.t().dot(&w)
    }

    /// ∇²C(x) = Σ_k b_kᵀ b_k · 2S_k / [bx]_k³.
    pub fn surrogate_hessian(&self, x: ArrayView1<f64>) -> Array2<f64> {
        let bx = self.mix(x);
        let w: Array1<f64> = self.stats.weighted_obs.iter().zip(bx.iter()).map(|(s, v)| 2.0 * s / (v * v * v)).collect();
        let scaled = &self.basis * &w.view().insert_axis(Axis(1));
        self.basis.t().dot(&scaled)
    }
}

struct Linearised<'a> {
    problem: CccpProblem<'a>,
    anchor_grad: Array1<f64>,
}

impl BoxObjective for Linearised<'_> {
    fn value(&self, x: ArrayView1<f64>) -> f64 {
        self.problem.surrogate(x, self.anchor_grad.view())
    }
    fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.problem.surrogate_gradient(x, self.anchor_grad.view())
    }
    fn hessian(&self, x: ArrayView1<f64>) -> Array2<f64> {
        self.problem.surrogate_hessian(x)
    }
}

#[derive(Debug, Clone)]
pub struct CccpOutcome {
    pub x: Array1<f64>,
    /// Newton iterations spent in the convex subproblems.
    pub inner_iterations: usize,
    pub rounds: usize,
}

/// One CCCP round: minimise the convex surrogate built at `x0` over x ≥ 0.
pub fn cccp_step(x0: ArrayView1<f64>, problem: &CccpProblem) -> Result<CccpOutcome> {
    if x0.iter().any(|v| !(*v >= 0.0)) || !problem.convex_part(x0).is_finite() {
        return Err(Error::input("CCCP start must be non-negative with positive mixture in every bin"));
    }
    let lin = Linearised { problem: *problem, anchor_grad: problem.concave_gradient(x0) };
    let rep = minimize(&lin, x0, 100, 1e-13);
    if rep.gradient_steps > 0 {
        log::debug!("CCCP subproblem used {} projected-gradient steps", rep.gradient_steps);
    }
    Ok(CccpOutcome { x: rep.x, inner_iterations: rep.iterations, rounds: 1 })
}

/// Repeats [`cccp_step`] up to `rounds` times or until −Q stops improving.
pub fn cccp_minimize(x0: ArrayView1<f64>, problem: &CccpProblem, rounds: usize) -> Result<CccpOutcome> {
    let mut x = x0.to_owned();
    let mut value = problem.neg_q(x.view());
    let mut out = CccpOutcome { x: x.clone(), inner_iterations: 0, rounds: 0 };
    for _ in 0..rounds {
        let step = cccp_step(x.view(), problem)?;
        out.inner_iterations += step.inner_iterations;
        out.rounds += 1;
        let next = problem.neg_q(step.x.view());
        let moved = (&step.x - &x).fold(0.0f64, |a, v| a.max(v.abs()));
        x = step.x;
        let size = x.fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let settled = next > value || moved <= 1e-12 * size;
        value = next;
        if settled {
            break;
        }
    }
    out.x = x;
    Ok(out)
}

/// Initial weight vectors from per-speaker NMF activations (N × T each):
/// the matrices are summed and their columns clustered into `n_states`.
pub fn init_states(per_speaker_coeffs: &[Array2<f64>], n_states: usize, seed: u64) -> Result<Array2<f64>> {
    let first = per_speaker_coeffs.first().ok_or_else(|| Error::input("no activation matrices"))?;
    let mut total = Array2::<f64>::zeros(first.dim());
    for c in per_speaker_coeffs {
        if c.dim() != first.dim() {
            return Err(Error::input(format!("activation shapes differ: {:?} vs {:?}", c.dim(), first.dim())));
        }
        total += c;
    }
    if total.ncols() < n_states {
        return Err(Error::input(format!("{} frames cannot seed {n_states} babble states", total.ncols())));
    }
    let clusters = kmeans(total.t(), n_states, seed, 4)?;
    Ok(clusters.centroids.reversed_axes())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BabbleTrainConfig {
    pub n_states: usize,
    pub n_iters: usize,
    pub seed: u64,
    pub init_gain_shape: f64,
    pub cccp_rounds: usize,
}

impl Default for BabbleTrainConfig {
    fn default() -> Self {
        BabbleTrainConfig { n_states: 10, n_iters: 15, seed: 0, init_gain_shape: 15.0, cccp_rounds: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedBabble {
    pub model: BabbleNhmm,
    pub levels: Vec<f64>,
    pub loglik_trace: Vec<f64>,
    /// Newton iterations spent in CCCP subproblems, per EM iteration.
    pub cccp_iterations: Vec<usize>,
    pub pinned_solves: usize,
    pub violations: usize,
}

/// Rescales all weight vectors by one shared factor (mean ℓ₁ norm becomes 1)
/// and folds it into every recording level, which leaves the likelihood
/// unchanged.
fn normalise(values: &mut Array2<f64>, levels: &mut [f64]) {
    let norm = values.sum() / values.ncols() as f64;
    if norm > 0.0 && norm.is_finite() {
        values.mapv_inplace(|v| v / norm);
        for l in levels.iter_mut() {
            *l *= norm;
        }
    }
}

/// Trains a babble model on floored K × T power spectrograms. `init_coeffs`
/// are per-speaker activation matrices for initialisation; without them the
/// babble data's own activations under the speech model are clustered.
pub fn train_babble(corpus: &[Array2<f64>], speech: &SpeechHmm, cfg: &BabbleTrainConfig, init_coeffs: Option<&[Array2<f64>]>) -> Result<TrainedBabble> {
    speech.validate()?;
    check_corpus(corpus, Some(speech.n_bins()))?;
    let m = cfg.n_states;
    if m == 0 || m > MAX_STATES {
        return Err(Error::input(format!("babble state count {m} outside 1..={MAX_STATES}")));
    }
    if m > STATE_WARN {
        log::warn!("{m} babble states: composite enhancement cost grows with N·{m}");
    }
    let basis = speech.basis.view();
    let mut values = match init_coeffs {
        Some(c) => init_states(c, m, cfg.seed)?,
        None => {
            let mut cols = Vec::new();
            for p in corpus {
                let level = speech.estimate_level(p.view(), 10)?;
                cols.push(speech.nmf_project(level, p.view())?.coeffs);
            }
            let joined = ndarray::concatenate(Axis(1), &cols.iter().map(|c| c.view()).collect::<Vec<_>>())
                .map_err(|e| Error::input(e.to_string()))?;
            init_states(&[joined], m, cfg.seed)?
        }
    };
    let shape = speech.shape.clone();
    let gain_shape = cfg.init_gain_shape;
    let mut levels = vec![1.0; corpus.len()];
    normalise(&mut values, &mut levels);
    let mut model = BabbleNhmm::new(Array2::from_elem((m, m), 1.0 / m as f64), values, shape, gain_shape, basis)?;
    let mean_col = model.nmf_basis(basis).mean().unwrap();
    levels = corpus.iter().map(|p| p.mean().unwrap() / (gain_shape * mean_col)).collect();

    let mut trace = Vec::with_capacity(cfg.n_iters + 1);
    let mut inner = Vec::with_capacity(cfg.n_iters);
    let mut pinned = 0;
    let mut violations = 0;
    for iter in 0..=cfg.n_iters {
        let em = model.emission(basis)?;
        let initial = model.initial()?;
        let parts: Vec<SequenceStats> = corpus
            .par_iter()
            .zip(levels.par_iter())
            .map(|(p, &lvl)| em.sequence_stats(model.trans.view(), initial.view(), lvl, p.view()))
            .collect::<Result<_>>()?;
        let (ll, pairs, occ, wobs, lng, lno, frames) = crate::emission::merge_stats(&parts);
        if let Some(&prev) = trace.last() {
            if ll < prev - MONOTONE_TOL * f64::abs(prev) {
                violations += 1;
                log::warn!("babble iteration {iter}: log-likelihood fell from {prev} to {ll}");
            }
        }
        log::info!("babble EM iteration {iter}: log-likelihood {ll:.6}");
        trace.push(ll);
        if iter == cfg.n_iters {
            break;
        }

        let cols = model.columns(basis);
        let residual: Array1<f64> = (0..cols.nrows())
            .map(|k| lno[k] - lng - (0..m).map(|j| occ[j] * cols[[k, j]].ln()).sum::<f64>())
            .collect();
        let shape = update_beta(&BetaStats { weighted_log_residual: residual, total_weight: frames as f64 })?;

        let updates: Vec<Result<(Array1<f64>, usize)>> = (0..m)
            .into_par_iter()
            .map(|j| {
                let x0 = model.state_values.column(j);
                if occ[j] < EMPTY_STATE {
                    return Ok((x0.to_owned(), 0));
                }
                let stats = CccpStats { occupancy: occ[j], weighted_obs: wobs.column(j).to_owned() };
                let problem = CccpProblem { basis, shape: shape.view(), stats: &stats };
                let out = cccp_minimize(x0, &problem, cfg.cccp_rounds)?;
                Ok((out.x, out.inner_iterations))
            })
            .collect();
        let mut values = model.state_values.clone();
        let mut spent = 0;
        for (j, u) in updates.into_iter().enumerate() {
            let (x, it) = u?;
            values.column_mut(j).assign(&x);
            spent += it;
        }
        inner.push(spent);
        let (gs, lv, gain_pinned) = update_gain(&parts)?;
        pinned += gain_pinned as usize;
        levels = lv;
        normalise(&mut values, &mut levels);
        model = BabbleNhmm::new(reestimate_trans(&model.trans, &pairs), values, shape, gs, basis)?;
    }
    Ok(TrainedBabble { model, levels, loglik_trace: trace, cccp_iterations: inner, pinned_solves: pinned, violations })
}

//! Online MMSE enhancement of speech in babble.
//!
//! Every (speech state, babble state) pair is a composite state. Per frame
//! and composite state the two gains are set to their MAP values, the state
//! is weighted by a Laplace approximation of its gain-marginal likelihood, and
//! the state-conditional Wiener gains are averaged under those weights. The
//! speech and babble levels are tracked by recursive EM.

use crate::babble::BabbleNhmm;
use crate::dsp::{istft, stft, FrameConfig, Spectrogram, POWER_FLOOR};
use crate::error::{Error, Result};
use crate::markov::{self, normalize_log_weights};
use crate::special::ln_gamma;
use crate::speech::SpeechHmm;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Level estimates are kept inside this range.
pub const LEVEL_MIN: f64 = 1e-12;
pub const LEVEL_MAX: f64 = 1e12;
/// Replacement determinant when the negative Hessian is not positive definite.
pub const DET_FLOOR: f64 = 1e-12;
pub const DIAGNOSTICS_VERSION: u32 = 1;

/// Exponential-case speech and babble models over a shared set of bins.
#[derive(Debug, Clone)]
pub struct CompositeModel {
    pub speech_trans: Array2<f64>,
    pub babble_trans: Array2<f64>,
    /// K × N̄ speech power columns.
    pub speech_cols: Array2<f64>,
    /// K × N̈ babble power columns.
    pub babble_cols: Array2<f64>,
    pub speech_initial: Array1<f64>,
    pub babble_initial: Array1<f64>,
}

fn unit_shape(shape: ArrayView1<f64>) -> bool {
    shape.iter().all(|a| (a - 1.0).abs() < 1e-12)
}

impl CompositeModel {
    /// Trained gamma shapes are folded into the columns (mean power per bin
    /// is kept) and the enhancer then treats every bin as exponential.
    pub fn new(speech: &SpeechHmm, babble: &BabbleNhmm) -> Result<Self> {
        speech.validate()?;
        babble.validate(speech.basis.view())?;
        if !unit_shape(speech.shape.view()) || !unit_shape(babble.shape.view()) {
            log::info!("enhancing with exponential bins; trained shapes are folded into the scale columns");
        }
        Self::from_parts(
            speech.trans.clone(),
            babble.trans.clone(),
            speech.nmf_basis(),
            babble.nmf_basis(speech.basis.view()),
        )
    }

    pub fn from_parts(speech_trans: Array2<f64>, babble_trans: Array2<f64>, speech_cols: Array2<f64>, babble_cols: Array2<f64>) -> Result<Self> {
        markov::check_row_stochastic(speech_trans.view())?;
        markov::check_row_stochastic(babble_trans.view())?;
        if speech_cols.nrows() != babble_cols.nrows() {
            return Err(Error::input(format!("speech has {} bins, babble {}", speech_cols.nrows(), babble_cols.nrows())));
        }
        if speech_cols.ncols() != speech_trans.nrows() || babble_cols.ncols() != babble_trans.nrows() {
            return Err(Error::input("column count does not match the transition matrix"));
        }
        if speech_cols.iter().chain(babble_cols.iter()).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::input("power columns must be positive and finite"));
        }
        let speech_initial = markov::stationary(speech_trans.view())?;
        let babble_initial = markov::stationary(babble_trans.view())?;
        Ok(CompositeModel { speech_trans, babble_trans, speech_cols, babble_cols, speech_initial, babble_initial })
    }

    pub fn n_bins(&self) -> usize {
        self.speech_cols.nrows()
    }

    pub fn n_speech(&self) -> usize {
        self.speech_cols.ncols()
    }

    pub fn n_babble(&self) -> usize {
        self.babble_cols.ncols()
    }

    pub fn n_states(&self) -> usize {
        self.n_speech() * self.n_babble()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancerConfig {
    pub speech_gain_shape: f64,
    pub babble_gain_shape: f64,
    pub speech_forget: f64,
    pub babble_forget: f64,
    pub speech_restriction: f64,
    pub babble_restriction: f64,
    /// Weight on the previous smoothed gain.
    pub smooth_memory: f64,
    /// Weight on the current raw gain.
    pub smooth_update: f64,
    /// Leading frames assumed babble-only when guessing initial levels.
    pub init_frames: usize,
    pub map_tol: f64,
    pub map_max_iter: usize,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        EnhancerConfig {
            speech_gain_shape: 15.0,
            babble_gain_shape: 15.0,
            speech_forget: 0.99,
            babble_forget: 0.98,
            speech_restriction: 100.0,
            babble_restriction: 100.0,
            smooth_memory: 0.4,
            smooth_update: 0.6,
            init_frames: 6,
            map_tol: 1e-6,
            map_max_iter: 50,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.speech_gain_shape, self.babble_gain_shape, self.speech_restriction, self.babble_restriction, self.map_tol];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::input("gain shapes, restrictions and tolerance must be positive"));
        }
        for f in [self.speech_forget, self.babble_forget] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::input(format!("forgetting factor {f} outside (0, 1)")));
            }
        }
        if self.smooth_memory < 0.0 || self.smooth_update < 0.0 || (self.smooth_memory + self.smooth_update - 1.0).abs() > 1e-12 {
            return Err(Error::input("smoothing weights must be non-negative and sum to 1"));
        }
        if self.map_max_iter == 0 || self.init_frames == 0 {
            return Err(Error::input("iteration and frame counts must be positive"));
        }
        Ok(())
    }
}

/// Gamma priors on the two gains of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPriors {
    pub speech_shape: f64,
    pub speech_level: f64,
    pub babble_shape: f64,
    pub babble_level: f64,
}

fn ln_gamma_prior(x: f64, shape: f64, scale: f64) -> f64 {
    (shape - 1.0) * x.ln() - x / scale - shape * scale.ln() - ln_gamma(shape)
}

/// ln f(y | g, h) + ln f(g) + ln f(h) for one composite state. `power` is
/// |y_k|², `speech`/`babble` the state's power columns.
pub fn map_objective(power: ArrayView1<f64>, speech: ArrayView1<f64>, babble: ArrayView1<f64>, g: f64, h: f64, pri: &GainPriors) -> f64 {
    if !(g > 0.0 && h > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut data = 0.0;
    for k in 0..power.len() {
        let var = g * speech[k] + h * babble[k];
        data -= PI.ln() + var.ln() + power[k] / var;
    }
    data + ln_gamma_prior(g, pri.speech_shape, pri.speech_level) + ln_gamma_prior(h, pri.babble_shape, pri.babble_level)
}

/// Non-negative root of x² + level(K − shape + 1)x − level·c = 0, the
/// gain maximising E ln f(component | x) + ln f(x) given the expected
/// normalised component power c.
pub fn gain_root(level: f64, shape: f64, n_bins: usize, c: f64) -> f64 {
    let a = level * (n_bins as f64 - shape + 1.0);
    let d = (a * a + 4.0 * level * c).sqrt();
    if a > 0.0 {
        2.0 * level * c / (a + d)
    } else {
        (d - a) / 2.0
    }
}

/// Expected normalised component powers (C_X, C_V) under the Wiener
/// posterior at gains (g, h).
pub fn expected_powers(power: ArrayView1<f64>, speech: ArrayView1<f64>, babble: ArrayView1<f64>, g: f64, h: f64) -> (f64, f64) {
    let (mut cx, mut cv) = (0.0, 0.0);
    for k in 0..power.len() {
        let (sx, sv) = (g * speech[k], h * babble[k]);
        let w = sx / (sx + sv);
        let ex = w * w * power[k] + sx * (1.0 - w);
        let ev = (1.0 - w) * (1.0 - w) * power[k] + sv * w;
        cx += ex / speech[k];
        cv += ev / babble[k];
    }
    (cx, cv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapGains {
    pub speech: f64,
    pub babble: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn map_run(power: ArrayView1<f64>, speech: ArrayView1<f64>, babble: ArrayView1<f64>, pri: &GainPriors, mut g: f64, mut h: f64, tol: f64, max_iter: usize) -> MapGains {
    let k = power.len();
    for it in 1..=max_iter {
        let (cx, cv) = expected_powers(power, speech, babble, g, h);
        let ng = gain_root(pri.speech_level, pri.speech_shape, k, cx);
        let nh = gain_root(pri.babble_level, pri.babble_shape, k, cv);
        let change = (ng - g).abs() / g + (nh - h).abs() / h;
        g = ng;
        h = nh;
        if !(g > 0.0 && h > 0.0) {
            return MapGains { speech: g, babble: h, iterations: it, converged: false };
        }
        if change < tol {
            return MapGains { speech: g, babble: h, iterations: it, converged: true };
        }
    }
    MapGains { speech: g, babble: h, iterations: max_iter, converged: false }
}

/// MAP gains of one composite state by EM over the hidden clean and babble
/// coefficients, started at the prior means. An unconverged run is retried
/// once from 1.5× the start; the better of the two is returned if that also
/// fails.
pub fn map_gains(power: ArrayView1<f64>, speech: ArrayView1<f64>, babble: ArrayView1<f64>, pri: &GainPriors, tol: f64, max_iter: usize) -> MapGains {
    let g0 = pri.speech_shape * pri.speech_level;
    let h0 = pri.babble_shape * pri.babble_level;
    let first = map_run(power, speech, babble, pri, g0, h0, tol, max_iter);
    if first.converged {
        return first;
    }
    let second = map_run(power, speech, babble, pri, 1.5 * g0, 1.5 * h0, tol, max_iter);
    if second.converged {
        return second;
    }
    let f1 = map_objective(power, speech, babble, first.speech, first.babble, pri);
    let f2 = map_objective(power, speech, babble, second.speech, second.babble, pri);
    if f2 > f1 {
        second
    } else {
        first
    }
}

/// Negative Hessian of ln f(y, g, h | state) with respect to (g, h).
pub fn neg_hessian(power: ArrayView1<f64>, speech: ArrayView1<f64>, babble: ArrayView1<f64>, g: f64, h: f64, pri: &GainPriors) -> [[f64; 2]; 2] {
    let (mut gg, mut gh, mut hh) = ((pri.speech_shape - 1.0) / (g * g), 0.0, (pri.babble_shape - 1.0) / (h * h));
    for k in 0..power.len() {
        let (u, v) = (speech[k], babble[k]);
        let var = g * u + h * v;
        let c = (1.0 - 2.0 * power[k] / var) / (var * var);
        gg -= u * u * c;
        gh -= u * v * c;
        hh -= v * v * c;
    }
    [[gg, gh], [gh, hh]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceWeight {
    /// Approximate ln f(y | state).
    pub log_weight: f64,
    /// The determinant was not positive and was replaced by [`DET_FLOOR`].
    pub clamped: bool,
}

/// Laplace approximation of ln ∫∫ f(y, g, h | state) dg dh around (g, h).
pub fn laplace_weight(power: ArrayView1<f64>, speech: ArrayView1<f64>, babble: ArrayView1<f64>, g: f64, h: f64, pri: &GainPriors) -> LaplaceWeight {
    let a = neg_hessian(power, speech, babble, g, h, pri);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let clamped = !(det > 0.0 && a[0][0] > 0.0);
    let det = if clamped { DET_FLOOR } else { det };
    let log_weight = map_objective(power, speech, babble, g, h, pri) + (2.0 * PI).ln() - 0.5 * det.ln();
    LaplaceWeight { log_weight, clamped }
}

/// Predicted composite-state probabilities āᵀ·F·ä from the N̄ × N̈ filtered
/// probabilities F of the previous frame.
pub fn predict_prior(forward: ArrayView2<f64>, speech_trans: ArrayView2<f64>, babble_trans: ArrayView2<f64>) -> Array2<f64> {
    speech_trans.t().dot(&forward).dot(&babble_trans)
}

/// Full N × N composite transition matrix with composite index i·N̈ + j.
pub fn composite_transition(speech_trans: ArrayView2<f64>, babble_trans: ArrayView2<f64>) -> Array2<f64> {
    let (ns, nb) = (speech_trans.nrows(), babble_trans.nrows());
    let mut out = Array2::zeros((ns * nb, ns * nb));
    for ((i, ip), a) in speech_trans.indexed_iter() {
        for ((j, jp), b) in babble_trans.indexed_iter() {
            out[[i * nb + j, ip * nb + jp]] = a * b;
        }
    }
    out
}

/// Per-stream state of the online enhancer.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerState {
    pub speech_level: f64,
    pub babble_level: f64,
    pub speech_info: f64,
    pub babble_info: f64,
    /// N̄ × N̈ filtered composite-state probabilities of the last frame;
    /// `None` before the first frame.
    pub forward: Option<Array2<f64>>,
    /// Last smoothed output gain.
    pub smoothed: Option<Array1<f64>>,
    pub frame: usize,
}

/// Fixed point of the information recursion when every frame contributes
/// the expected curvature shape/level² of a gamma scale.
pub fn stationary_info(level: f64, shape: f64, forget: f64, restriction: f64) -> f64 {
    (shape / (level * level)).max(restriction) / (1.0 - forget)
}

impl EnhancerState {
    /// Starts the information accumulators at their stationary values for
    /// the given levels, so the first steps are as small as later ones.
    pub fn new(cfg: &EnhancerConfig, speech_level: f64, babble_level: f64) -> Self {
        let speech_level = speech_level.clamp(LEVEL_MIN, LEVEL_MAX);
        let babble_level = babble_level.clamp(LEVEL_MIN, LEVEL_MAX);
        EnhancerState {
            speech_level,
            babble_level,
            speech_info: stationary_info(speech_level, cfg.speech_gain_shape, cfg.speech_forget, cfg.speech_restriction),
            babble_info: stationary_info(babble_level, cfg.babble_gain_shape, cfg.babble_forget, cfg.babble_restriction),
            forward: None,
            smoothed: None,
            frame: 0,
        }
    }

    pub fn priors(&self, cfg: &EnhancerConfig) -> GainPriors {
        GainPriors {
            speech_shape: cfg.speech_gain_shape,
            speech_level: self.speech_level,
            babble_shape: cfg.babble_gain_shape,
            babble_level: self.babble_level,
        }
    }
}

/// Initial (speech, babble) levels from the leading frames, taken as
/// babble-only: the babble level matches their mean power and the speech
/// level is set so speech would have the same mean power.
pub fn initial_levels(model: &CompositeModel, cfg: &EnhancerConfig, power: ArrayView2<f64>) -> (f64, f64) {
    let n = cfg.init_frames.min(power.ncols()).max(1);
    let mean_power = if power.ncols() == 0 {
        POWER_FLOOR
    } else {
        // fixed summation order so the guess does not depend on later frames
        let mut sum = 0.0;
        for t in 0..n {
            for v in power.column(t) {
                sum += v;
            }
        }
        (sum / (n * power.nrows()) as f64).max(POWER_FLOOR)
    };
    let speech_mean = model.speech_cols.mean_axis(Axis(0)).unwrap().dot(&model.speech_initial);
    let babble_mean = model.babble_cols.mean_axis(Axis(0)).unwrap().dot(&model.babble_initial);
    (mean_power / (cfg.speech_gain_shape * speech_mean), mean_power / (cfg.babble_gain_shape * babble_mean))
}

/// One recursive-EM step for both levels from the filtered state weights and
/// per-state MAP gains (all N̄ × N̈).
pub fn recursive_update(state: &mut EnhancerState, cfg: &EnhancerConfig, weights: ArrayView2<f64>, speech_gain: ArrayView2<f64>, babble_gain: ArrayView2<f64>) {
    fn step(level: f64, info: &mut f64, shape: f64, forget: f64, restriction: f64, w: ArrayView2<f64>, gain: ArrayView2<f64>) -> f64 {
        let (mut score, mut curv) = (0.0, 0.0);
        Zip::from(w).and(gain).for_each(|&w, &x| {
            score += w * (-shape / level + x / (level * level));
            curv += w * (-shape / (level * level) + 2.0 * x / (level * level * level));
        });
        *info = forget * *info + curv.max(restriction);
        (level + score / *info).clamp(LEVEL_MIN, LEVEL_MAX)
    }
    state.speech_level = step(state.speech_level, &mut state.speech_info, cfg.speech_gain_shape, cfg.speech_forget, cfg.speech_restriction, weights, speech_gain);
    state.babble_level = step(state.babble_level, &mut state.babble_info, cfg.babble_gain_shape, cfg.babble_forget, cfg.babble_restriction, weights, babble_gain);
}

/// Per-frame record of the enhancer, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub version: u32,
    pub frame: usize,
    /// Levels after the frame's update.
    pub speech_level: f64,
    pub babble_level: f64,
    pub speech_state: usize,
    pub babble_state: usize,
    pub mean_gain: f64,
    pub map_unconverged: usize,
    pub det_clamped: usize,
    pub weights_underflow: bool,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub enhanced: Array1<Complex64>,
    pub raw_gain: Array1<f64>,
    pub smoothed_gain: Array1<f64>,
    pub diagnostics: FrameDiagnostics,
}

struct StateResult {
    g: f64,
    h: f64,
    log_weight: f64,
    wiener: Array1<f64>,
    unconverged: bool,
    clamped: bool,
}

fn evaluate_state(power: ArrayView1<f64>, speech: ArrayView1<f64>, babble: ArrayView1<f64>, pri: &GainPriors, cfg: &EnhancerConfig) -> StateResult {
    let map = map_gains(power, speech, babble, pri, cfg.map_tol, cfg.map_max_iter);
    let (g, h) = (map.speech.max(f64::MIN_POSITIVE), map.babble.max(f64::MIN_POSITIVE));
    let lw = laplace_weight(power, speech, babble, g, h, pri);
    let wiener = Zip::from(speech).and(babble).map_collect(|&u, &v| {
        let (cx, cv) = (g * u, h * v);
        cx / (cx + cv)
    });
    StateResult { g, h, log_weight: lw.log_weight, wiener, unconverged: !map.converged, clamped: lw.clamped }
}

/// Enhances one frame of one-sided DFT coefficients and advances `state`.
pub fn enhance_frame(y: ArrayView1<Complex64>, model: &CompositeModel, cfg: &EnhancerConfig, state: &mut EnhancerState) -> Result<FrameOutput> {
    let k = model.n_bins();
    if y.len() != k {
        return Err(Error::input(format!("frame has {} bins, model {k}", y.len())));
    }
    if y.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::input(format!("non-finite coefficient in frame {}", state.frame)));
    }
    let (ns, nb) = (model.n_speech(), model.n_babble());
    let power = y.mapv(|c| c.norm_sqr());
    let prior = match &state.forward {
        Some(f) => predict_prior(f.view(), model.speech_trans.view(), model.babble_trans.view()),
        None => {
            let p = &model.speech_initial.view().insert_axis(Axis(1)) * &model.babble_initial.view().insert_axis(Axis(0));
            p.to_owned()
        }
    };
    let pri = state.priors(cfg);
    let results: Vec<StateResult> = (0..ns * nb)
        .into_par_iter()
        .map(|s| evaluate_state(power.view(), model.speech_cols.column(s / nb), model.babble_cols.column(s % nb), &pri, cfg))
        .collect();

    let log_zeta: Array1<f64> = results.iter().zip(prior.iter()).map(|(r, p)| p.ln() + r.log_weight).collect();
    let (weights, underflow) = normalize_log_weights(log_zeta.view());
    if underflow {
        log::warn!("frame {}: all state weights underflowed, using uniform weights", state.frame);
    }
    let mut raw = Array1::<f64>::zeros(k);
    for (r, &w) in results.iter().zip(weights.iter()) {
        if w > 0.0 {
            raw.scaled_add(w, &r.wiener);
        }
    }
    raw.mapv_inplace(|v| v.clamp(0.0, 1.0));
    let smoothed = match &state.smoothed {
        Some(prev) => (prev * cfg.smooth_memory + &raw * cfg.smooth_update).mapv(|v| v.clamp(0.0, 1.0)),
        None => raw.clone(),
    };
    let enhanced = Zip::from(&smoothed).and(y).map_collect(|&g, &c| c * g);

    let weights = weights.into_shape_with_order((ns, nb)).map_err(|e| Error::numerical(e.to_string()))?;
    let g = Array2::from_shape_vec((ns, nb), results.iter().map(|r| r.g).collect()).unwrap();
    let h = Array2::from_shape_vec((ns, nb), results.iter().map(|r| r.h).collect()).unwrap();
    recursive_update(state, cfg, weights.view(), g.view(), h.view());

    let top = weights.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &w)| if w > best.1 { (i, w) } else { best }).0;
    let diagnostics = FrameDiagnostics {
        version: DIAGNOSTICS_VERSION,
        frame: state.frame,
        speech_level: state.speech_level,
        babble_level: state.babble_level,
        speech_state: top / nb,
        babble_state: top % nb,
        mean_gain: smoothed.mean().unwrap_or(0.0),
        map_unconverged: results.iter().filter(|r| r.unconverged).count(),
        det_clamped: results.iter().filter(|r| r.clamped).count(),
        weights_underflow: underflow,
    };
    if diagnostics.det_clamped > 0 {
        log::debug!("frame {}: {} states with non-positive Hessian determinant", state.frame, diagnostics.det_clamped);
    }
    state.forward = Some(weights);
    state.smoothed = Some(smoothed.clone());
    state.frame += 1;
    Ok(FrameOutput { enhanced, raw_gain: raw, smoothed_gain: smoothed, diagnostics })
}

#[derive(Debug, Clone)]
pub struct Enhanced {
    pub spectrum: Spectrogram,
    /// K × T smoothed gains actually applied.
    pub gains: Array2<f64>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

/// Runs the enhancer over a spectrogram in time order. Without explicit
/// `(speech, babble)` levels they are guessed from the leading frames.
pub fn enhance_spectrogram(noisy: &Spectrogram, model: &CompositeModel, cfg: &EnhancerConfig, levels: Option<(f64, f64)>) -> Result<Enhanced> {
    cfg.validate()?;
    if noisy.n_bins() != model.n_bins() {
        return Err(Error::input(format!("spectrogram has {} bins, model {}", noisy.n_bins(), model.n_bins())));
    }
    let (theta, gamma) = match levels {
        Some(l) => l,
        None => {
            let power = noisy.frames.mapv(|c| c.norm_sqr());
            initial_levels(model, cfg, power.view())
        }
    };
    if !(theta > 0.0 && gamma > 0.0) {
        return Err(Error::input("initial levels must be positive"));
    }
    let mut state = EnhancerState::new(cfg, theta, gamma);
    let mut frames = noisy.frames.clone();
    let mut gains = Array2::zeros(noisy.frames.dim());
    let mut diagnostics = Vec::with_capacity(noisy.n_frames());
    for t in 0..noisy.n_frames() {
        let out = enhance_frame(noisy.frames.column(t), model, cfg, &mut state)?;
        frames.column_mut(t).assign(&out.enhanced);
        gains.column_mut(t).assign(&out.smoothed_gain);
        diagnostics.push(out.diagnostics);
    }
    Ok(Enhanced { spectrum: Spectrogram { frames, config: noisy.config.clone() }, gains, diagnostics })
}

/// STFT, online enhancement and overlap-add resynthesis of a waveform.
pub fn enhance_signal(noisy: &[f64], frame: &FrameConfig, model: &CompositeModel, cfg: &EnhancerConfig, levels: Option<(f64, f64)>) -> Result<(Vec<f64>, Enhanced)> {
    let spec = stft(noisy, frame)?;
    let out = enhance_spectrogram(&spec, model, cfg, levels)?;
    let mut signal = istft(&out.spectrum)?;
    signal.resize(noisy.len(), 0.0);
    Ok((signal, out))
}

/// Writes diagnostics as line-delimited JSON.
pub fn diagnostics_lines(diag: &[FrameDiagnostics]) -> Result<String> {
    let mut out = String::new();
    for d in diag {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn priors() -> GainPriors {
        GainPriors { speech_shape: 15.0, speech_level: 0.1, babble_shape: 15.0, babble_level: 0.2 }
    }

    #[test]
    fn gain_root_examples() {
        assert!((gain_root(1.0, 1.0, 1, 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(gain_root(1.0, 1.0, 1, 0.0), 0.0);
        assert_eq!(gain_root(0.3, 2.0, 4, 0.0), 0.0);
        // shape above K + 1 leaves a positive root even without data
        assert!(gain_root(1.0, 10.0, 2, 0.0) > 0.0);
    }

    #[test]
    fn determinant_contribution() {
        // diagonal A = diag(4, 9) from a zero-bin frame with chosen gains
        let e = Array1::<f64>::zeros(0);
        let pri = GainPriors { speech_shape: 5.0, speech_level: 1.0, babble_shape: 10.0, babble_level: 1.0 };
        let a = neg_hessian(e.view(), e.view(), e.view(), 1.0, 1.0, &pri);
        assert_eq!(a, [[4.0, 0.0], [0.0, 9.0]]);
        let lw = laplace_weight(e.view(), e.view(), e.view(), 1.0, 1.0, &pri);
        let want = map_objective(e.view(), e.view(), e.view(), 1.0, 1.0, &pri) + (2.0 * PI).ln() - 0.5 * 36f64.ln();
        assert!((lw.log_weight - want).abs() < 1e-12);
    }

    #[test]
    fn map_fixed_point() {
        let p = array![0.3, 1.2, 0.05, 2.0];
        let u = array![0.5, 1.0, 0.2, 0.7];
        let v = array![0.4, 0.1, 0.3, 1.1];
        let pri = priors();
        let m = map_gains(p.view(), u.view(), v.view(), &pri, 1e-12, 500);
        assert!(m.converged);
        let (cx, cv) = expected_powers(p.view(), u.view(), v.view(), m.speech, m.babble);
        let g = gain_root(pri.speech_level, pri.speech_shape, 4, cx);
        let h = gain_root(pri.babble_level, pri.babble_shape, 4, cv);
        assert!((g - m.speech).abs() < 1e-6 * m.speech);
        assert!((h - m.babble).abs() < 1e-6 * m.babble);
    }

    #[test]
    fn symmetric_gain_is_half() {
        let model = CompositeModel::from_parts(array![[1.0]], array![[1.0]], array![[1.0], [2.0]], array![[1.0], [2.0]]).unwrap();
        let cfg = EnhancerConfig::default();
        let mut st = EnhancerState::new(&cfg, 0.5, 0.5);
        let y = array![Complex64::new(0.3, 0.1), Complex64::new(-1.0, 0.4)];
        let out = enhance_frame(y.view(), &model, &cfg, &mut st).unwrap();
        for g in out.raw_gain.iter() {
            assert!((g - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn recursive_examples() {
        let cfg = EnhancerConfig::default();
        let w = array![[0.25, 0.75]];
        let mut st = EnhancerState::new(&cfg, 0.1, 0.2);
        let g = Array2::from_elem((1, 2), 15.0 * 0.1);
        let h = Array2::from_elem((1, 2), 15.0 * 0.2);
        recursive_update(&mut st, &cfg, w.view(), g.view(), h.view());
        assert!((st.speech_level - 0.1).abs() < 1e-15);
        assert!((st.babble_level - 0.2).abs() < 1e-15);

        let mut st = EnhancerState::new(&cfg, 100.0, 100.0);
        assert!((st.speech_info - 100.0 / 0.01).abs() < 1e-9);
        let (si, bi) = (st.speech_info, st.babble_info);
        let w = array![[1.0]];
        recursive_update(&mut st, &cfg, w.view(), array![[2000.0]].view(), array![[1500.0]].view());
        assert!(st.speech_level > 100.0);
        assert!((st.speech_info - (0.99 * si + 100.0)).abs() < 1e-9);
        assert!((st.babble_info - (0.98 * bi + 100.0)).abs() < 1e-9);

        let st = EnhancerState::new(&cfg, 0.1, 0.2);
        assert!((st.speech_info - 1500.0 / 0.01).abs() < 1e-6);
        assert!((st.babble_info - 375.0 / 0.02).abs() < 1e-6);
    }

    #[test]
    fn config_checks() {
        assert!(EnhancerConfig::default().validate().is_ok());
        let bad = EnhancerConfig { smooth_memory: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EnhancerConfig { speech_forget: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}

//! Desk-scale corpora: synthetic gamma-HMM speech, multi-talker babble and
//! SNR-controlled mixtures, plus the plain-text manifest format.

use crate::dsp::{istft, FrameConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::speech::SpeechHmm;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// Peak amplitude of synthesised babble.
pub const BABBLE_PEAK: f64 = 0.9;
/// Frames this far below the loudest one do not count as active speech.
pub const ACTIVITY_GATE_DB: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeechGenConfig {
    pub n_states: usize,
    pub n_bins: usize,
    pub shape: f64,
    pub gain_shape: f64,
    /// Gain scale θ; the mean gain is gain_shape·level.
    pub level: f64,
    /// Self-transition probability of every state.
    pub self_prob: f64,
    /// Peak deviation of the log-spectral profiles, in dB.
    pub spread_db: f64,
    /// Average per-bin power at unit gain.
    pub mean_power: f64,
    pub model_seed: u64,
}

impl Default for SpeechGenConfig {
    fn default() -> Self {
        SpeechGenConfig {
            n_states: 10,
            n_bins: 161,
            shape: 1.0,
            gain_shape: 15.0,
            level: 1.0 / 15.0,
            self_prob: 0.85,
            spread_db: 12.0,
            mean_power: 0.3,
            model_seed: 1,
        }
    }
}

/// A random ergodic speech-like model: strong self-transitions and smooth
/// log-spectral state profiles.
pub fn synthetic_speech_model(cfg: &SpeechGenConfig) -> Result<SpeechHmm> {
    let (n, k) = (cfg.n_states, cfg.n_bins);
    if n == 0 || k == 0 || !(cfg.self_prob >= 0.0 && cfg.self_prob < 1.0 || n == 1) {
        return Err(Error::input(format!("invalid generator configuration {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model_seed);
    let mut trans = Array2::zeros((n, n));
    for i in 0..n {
        if n == 1 {
            trans[[0, 0]] = 1.0;
            continue;
        }
        let mut row: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { rng.random_range(0.1..1.0) }).collect();
        let off: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v *= (1.0 - cfg.self_prob) / off;
        }
        row[i] = cfg.self_prob;
        let s: f64 = row.iter().sum();
        for j in 0..n {
            trans[[i, j]] = row[j] / s;
        }
    }
    let mut basis = Array2::zeros((k, n));
    for i in 0..n {
        let harmonics: Vec<(f64, f64)> = (1..=4).map(|m| (rng.random_range(-1.0..1.0) / m as f64, rng.random_range(0.0..2.0 * PI))).collect();
        let profile: Vec<f64> = (0..k)
            .map(|kk| {
                let x = kk as f64 / (k.max(2) - 1) as f64;
                harmonics.iter().enumerate().map(|(m, (a, ph))| a * (PI * (m + 1) as f64 * x + ph).cos()).sum()
            })
            .collect();
        let peak = profile.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        for kk in 0..k {
            let db = cfg.spread_db * profile[kk] / peak;
            basis[[kk, i]] = cfg.mean_power / (cfg.shape * cfg.gain_shape * cfg.level) * 10f64.powf(db / 10.0);
        }
    }
    SpeechHmm::new(trans, basis, Array1::from_elem(k, cfg.shape), cfg.gain_shape)
}

#[derive(Debug, Clone)]
pub struct SyntheticSpeech {
    pub model: SpeechHmm,
    pub level: f64,
    pub states: Vec<usize>,
    pub gains: Vec<f64>,
    /// K × T emitted powers (gamma draws around the conditional means).
    pub power: Array2<f64>,
    /// Waveform whose frames follow the conditional means, when requested.
    pub waveform: Option<Vec<f64>>,
}

fn sample_index(p: impl Iterator<Item = f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, v) in p.enumerate() {
        acc += v;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples a state path, gains and gamma powers from `model`; with a frame
/// configuration also renders a waveform.
pub fn sample_speech(model: &SpeechHmm, level: f64, n_frames: usize, frame: Option<&FrameConfig>, seed: u64) -> Result<SyntheticSpeech> {
    if n_frames == 0 || !(level > 0.0) {
        return Err(Error::input("need at least one frame and a positive level"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = model.initial()?;
    let gain_dist = Gamma::new(model.gain_shape, level).map_err(|e| Error::input(e.to_string()))?;
    let mean_basis = model.nmf_basis();
    let k = model.n_bins();
    let mut states = Vec::with_capacity(n_frames);
    let mut gains = Vec::with_capacity(n_frames);
    let mut power = Array2::zeros((k, n_frames));
    let mut means = Array2::zeros((k, n_frames));
    let mut s = sample_index(pi.iter().cloned(), &mut rng);
    for t in 0..n_frames {
        if t > 0 {
            s = sample_index(model.trans.row(s).iter().cloned(), &mut rng);
        }
        let g: f64 = gain_dist.sample(&mut rng);
        for kk in 0..k {
            let d = Gamma::new(model.shape[kk], g * model.basis[[kk, s]]).map_err(|e| Error::input(e.to_string()))?;
            power[[kk, t]] = d.sample(&mut rng).max(f64::MIN_POSITIVE);
            means[[kk, t]] = g * mean_basis[[kk, s]];
        }
        states.push(s);
        gains.push(g);
    }
    let waveform = match frame {
        Some(cfg) => Some(render_waveform(&means, cfg, &mut rng)?),
        None => None,
    };
    Ok(SyntheticSpeech { model: model.clone(), level, states, gains, power, waveform })
}

/// `gen_synthetic_speech`: a fresh model from `cfg` plus one sampled sequence.
pub fn gen_synthetic_speech(cfg: &SpeechGenConfig, n_frames: usize, frame: Option<&FrameConfig>, seed: u64) -> Result<SyntheticSpeech> {
    let model = synthetic_speech_model(cfg)?;
    sample_speech(&model, cfg.level, n_frames, frame, seed)
}

/// Gaussian noise whose short-time spectrum follows `means` (K × T): one
/// circular segment per half-frame step, square-root-Hann weighted and
/// overlap-added so the variance stays constant across segment joins.
fn render_waveform(means: &Array2<f64>, cfg: &FrameConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (k, t_len) = means.dim();
    if k != cfg.n_bins() {
        return Err(Error::input(format!("model has {k} bins but frames give {}", cfg.n_bins())));
    }
    let n = cfg.frame_len;
    let hop = cfg.hop;
    let analysis = cfg.window();
    let energy: f64 = analysis.iter().map(|w| w * w).sum();
    let synth: Vec<f64> = analysis.iter().map(|w| w.sqrt()).collect();
    let len = cfg.signal_len(t_len);
    let mut out = vec![0.0; len];
    let seg_cfg = FrameConfig { window: cfg.window, ..*cfg };
    for j in 0..=t_len + 1 {
        let col = means.column(j.saturating_sub(1).min(t_len - 1));
        let mut frames = Array2::zeros((k, 1));
        for kk in 0..k {
            let var = col[kk] * n as f64 / energy;
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            frames[[kk, 0]] = if kk == 0 || kk == k - 1 {
                Complex64::new(re * var.sqrt(), 0.0)
            } else {
                Complex64::new(re, im) * (0.5 * var).sqrt()
            };
        }
        // a single-frame inverse transform is a plain inverse DFT
        let seg = istft(&Spectrogram { frames, config: seg_cfg })?;
        let start = j as isize * hop as isize - hop as isize;
        for i in 0..n {
            let pos = start + i as isize;
            if pos >= 0 && (pos as usize) < len {
                out[pos as usize] += synth[i] * seg[i];
            }
        }
    }
    Ok(out)
}

/// Mean power of the frames within [`ACTIVITY_GATE_DB`] of the loudest frame.
pub fn active_level(signal: &[f64], cfg: &FrameConfig) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::input("empty signal"));
    }
    let powers: Vec<f64> = if signal.len() < cfg.frame_len {
        vec![signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64]
    } else {
        (0..cfg.n_frames(signal.len()))
            .map(|t| signal[t * cfg.hop..t * cfg.hop + cfg.frame_len].iter().map(|v| v * v).sum::<f64>() / cfg.frame_len as f64)
            .collect()
    };
    let max = powers.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::input("signal is silent"));
    }
    let gate = max * 10f64.powf(-ACTIVITY_GATE_DB / 10.0);
    let active: Vec<f64> = powers.into_iter().filter(|p| *p >= gate).collect();
    Ok(active.iter().sum::<f64>() / active.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub target_snr_db: f64,
    pub speaker_count: usize,
    pub offsets_db: Vec<f64>,
    pub seed: u64,
}

impl MixSpec {
    pub fn equal_levels(speaker_count: usize, seed: u64) -> Self {
        MixSpec { target_snr_db: 0.0, speaker_count, offsets_db: vec![0.0; speaker_count], seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speaker_count == 0 || self.offsets_db.len() != self.speaker_count {
            return Err(Error::input(format!(
                "{} speakers with {} level offsets",
                self.speaker_count,
                self.offsets_db.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Babble {
    pub signal: Vec<f64>,
    /// Factor applied by peak normalisation; `signal / scale` is the raw sum.
    pub scale: f64,
}

/// Sums level-equalised sources (truncated to the shortest) and
/// peak-normalises the result.
pub fn synth_babble(sources: &[Vec<f64>], spec: &MixSpec, cfg: &FrameConfig) -> Result<Babble> {
    spec.validate()?;
    if sources.len() != spec.speaker_count {
        return Err(Error::input(format!("{} sources for {} speakers", sources.len(), spec.speaker_count)));
    }
    let len = sources.iter().map(Vec::len).min().unwrap_or(0);
    if len == 0 {
        return Err(Error::input("babble source is empty"));
    }
    let mut sum = vec![0.0; len];
    for (src, off) in sources.iter().zip(&spec.offsets_db) {
        let gain = 10f64.powf(off / 20.0) / active_level(&src[..len], cfg)?.sqrt();
        for (acc, v) in sum.iter_mut().zip(src) {
            *acc += gain * v;
        }
    }
    let peak = sum.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if peak > 0.0 { BABBLE_PEAK / peak } else { 1.0 };
    Ok(Babble { signal: sum.iter().map(|v| v * scale).collect(), scale })
}

#[derive(Debug, Clone)]
pub struct Mix {
    pub noisy: Vec<f64>,
    /// The noise exactly as added to the speech.
    pub noise: Vec<f64>,
    pub scale: f64,
}

/// Adds `noise` (looped from a seeded random offset) at `snr_db` relative to
/// the active speech level; `f64::INFINITY` returns the speech unchanged.
pub fn mix_at_snr(speech: &[f64], noise: &[f64], snr_db: f64, seed: u64, cfg: &FrameConfig) -> Result<Mix> {
    let ps = active_level(speech, cfg)?;
    if snr_db == f64::INFINITY {
        return Ok(Mix { noisy: speech.to_vec(), noise: vec![0.0; speech.len()], scale: 0.0 });
    }
    if !snr_db.is_finite() {
        return Err(Error::input(format!("target SNR {snr_db} dB")));
    }
    if noise.is_empty() {
        return Err(Error::input("noise signal is empty"));
    }
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..noise.len());
    let looped: Vec<f64> = (0..speech.len()).map(|i| noise[(offset + i) % noise.len()]).collect();
    let pn = looped.iter().map(|v| v * v).sum::<f64>() / looped.len() as f64;
    if !(pn > 0.0) {
        return Err(Error::input("noise segment is silent"));
    }
    let scale = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let noise: Vec<f64> = looped.iter().map(|v| v * scale).collect();
    let noisy = speech.iter().zip(&noise).map(|(s, n)| s + n).collect();
    Ok(Mix { noisy, noise, scale })
}

/// Measured active-speech to noise ratio in dB.
pub fn measured_snr_db(speech: &[f64], noise: &[f64], cfg: &FrameConfig) -> Result<f64> {
    let pn = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    Ok(10.0 * (active_level(speech, cfg)? / pn).log10())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File(PathBuf),
    Synth,
}

/// One manifest line: `<role> <path|synth> [key=value ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub role: String,
    pub source: Source,
    pub params: BTreeMap<String, String>,
}

impl ManifestEntry {
    pub fn param<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.params.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::input(format!("manifest parameter {key}={v} is malformed"))),
        }
    }
}

/// Parses a manifest; relative paths resolve against `base_dir`. Blank lines
/// and `#` comments are ignored.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let role = words.next().unwrap().to_string();
        let src = words
            .next()
            .ok_or_else(|| Error::input(format!("manifest line {}: missing source", lineno + 1)))?;
        let source = if src == "synth" {
            Source::Synth
        } else {
            let p = Path::new(src);
            Source::File(if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) })
        };
        let mut params = BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::input(format!("manifest line {}: expected key=value, got {w}", lineno + 1)))?;
            params.insert(k.to_string(), v.to_string());
        }
        out.push(ManifestEntry { role, source, params });
    }
    Ok(out)
}

/// Fraction of frames spent in each state.
pub fn state_frequencies(states: &[usize], n: usize) -> Vec<f64> {
    let mut f = vec![0.0; n];
    for &s in states {
        f[s] += 1.0;
    }
    f.iter().map(|c| c / states.len() as f64).collect()
}

//! Objective quality measures, shadow filtering and the cross-predictive
//! model-fit test.

use crate::babble::BabbleNhmm;
use crate::dsp::{floor_power, istft, periodogram, stft, FrameConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::speech::SpeechHmm;
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const SDR_CLAMP_DB: f64 = 100.0;
pub const SEGSNR_MIN_DB: f64 = -10.0;
pub const SEGSNR_MAX_DB: f64 = 30.0;
pub const SEGNR_MIN_DB: f64 = 0.0;
pub const SEGNR_MAX_DB: f64 = 40.0;
/// Frames this far below the long-term frame power are left out of SD.
pub const SD_GATE_DB: f64 = 40.0;
/// Log floor for SD, relative to each signal's long-term mean bin power.
pub const SD_LOG_FLOOR: f64 = 1e-10;
pub const REPORT_VERSION: u32 = 1;

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn db_ratio(num: f64, den: f64, lo: f64, hi: f64) -> f64 {
    let r = 10.0 * (num / den).log10();
    if r.is_nan() {
        lo
    } else {
        r.clamp(lo, hi)
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::input(format!("signal lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Source-to-distortion ratio with the estimate split into its projection on
/// the reference and a residual. Clamped to ±100 dB.
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(reference, estimate)?;
    let rr = energy(reference);
    if !(rr > 0.0) {
        return Err(Error::input("reference is all zero"));
    }
    let proj = reference.iter().zip(estimate).map(|(r, e)| r * e).sum::<f64>() / rr;
    let target = proj * proj * rr;
    let resid: f64 = reference.iter().zip(estimate).map(|(r, e)| (e - proj * r).powi(2)).sum();
    Ok(db_ratio(target, resid, -SDR_CLAMP_DB, SDR_CLAMP_DB))
}

/// Long-term SNR of an estimate against its reference, clamped to ±100 dB.
pub fn snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(reference, estimate)?;
    let err: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e).powi(2)).sum();
    Ok(db_ratio(energy(reference), err, -SDR_CLAMP_DB, SDR_CLAMP_DB))
}

fn frames(len: usize, cfg: &FrameConfig) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
    let n = if len < cfg.frame_len { 0 } else { cfg.n_frames(len) };
    (0..n).map(move |t| t * cfg.hop..t * cfg.hop + cfg.frame_len)
}

/// Per-frame SNR clamped to [−10, 30] dB over rectangular frames with
/// non-zero reference energy. Empty when no such frame exists.
pub fn segsnr_frames(reference: &[f64], estimate: &[f64], cfg: &FrameConfig) -> Result<Vec<f64>> {
    same_len(reference, estimate)?;
    Ok(frames(reference.len(), cfg)
        .filter_map(|r| {
            let s = energy(&reference[r.clone()]);
            if s > 0.0 {
                let e: f64 = reference[r.clone()].iter().zip(&estimate[r]).map(|(a, b)| (a - b).powi(2)).sum();
                Some(db_ratio(s, e, SEGSNR_MIN_DB, SEGSNR_MAX_DB))
            } else {
                None
            }
        })
        .collect())
}

fn mean_or(v: &[f64], empty: f64) -> f64 {
    if v.is_empty() {
        empty
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean of [`segsnr_frames`]; the floor when the reference is silent.
pub fn segsnr(reference: &[f64], estimate: &[f64], cfg: &FrameConfig) -> Result<f64> {
    Ok(mean_or(&segsnr_frames(reference, estimate, cfg)?, SEGSNR_MIN_DB))
}

/// Per-frame log-spectral distances (dB) over frames passing the activity gate.
pub fn spectral_distortion_frames(reference: &[f64], estimate: &[f64], cfg: &FrameConfig) -> Result<Vec<f64>> {
    same_len(reference, estimate)?;
    let pr = periodogram(&stft(reference, cfg)?);
    let pe = periodogram(&stft(estimate, cfg)?);
    let frame_power = pr.sum_axis(ndarray::Axis(0));
    let long_term = frame_power.mean().unwrap_or(0.0);
    if !(long_term > 0.0) {
        return Err(Error::input("reference is silent"));
    }
    let gate = long_term * 10f64.powf(-SD_GATE_DB / 10.0);
    let floor_r = SD_LOG_FLOOR * long_term / pr.nrows() as f64;
    let floor_e = (SD_LOG_FLOOR * pe.mean().unwrap_or(0.0)).max(f64::MIN_POSITIVE);
    let out: Vec<f64> = (0..pr.ncols())
        .filter(|&t| frame_power[t] >= gate)
        .map(|t| {
            let ms = Zip::from(pr.column(t)).and(pe.column(t)).fold(0.0, |acc, &a, &b| {
                let d = 10.0 * (a.max(floor_r).log10() - b.max(floor_e).log10());
                acc + d * d
            });
            (ms / pr.nrows() as f64).sqrt()
        })
        .collect();
    if out.is_empty() {
        return Err(Error::input("no frame passes the activity gate"));
    }
    Ok(out)
}

pub fn spectral_distortion(reference: &[f64], estimate: &[f64], cfg: &FrameConfig) -> Result<f64> {
    Ok(mean_or(&spectral_distortion_frames(reference, estimate, cfg)?, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub sdr_db: f64,
    pub snr_db: f64,
    pub segsnr_db: f64,
    pub sd_db: f64,
    pub frame_segsnr: Vec<f64>,
    pub frame_sd: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn new(reference: &[f64], estimate: &[f64], cfg: &FrameConfig, metadata: BTreeMap<String, String>) -> Result<Self> {
        let frame_segsnr = segsnr_frames(reference, estimate, cfg)?;
        let frame_sd = spectral_distortion_frames(reference, estimate, cfg)?;
        Ok(EvalReport {
            version: REPORT_VERSION,
            sdr_db: sdr(reference, estimate)?,
            snr_db: snr(reference, estimate)?,
            segsnr_db: mean_or(&frame_segsnr, SEGSNR_MIN_DB),
            sd_db: mean_or(&frame_sd, 0.0),
            frame_segsnr,
            frame_sd,
            metadata,
        })
    }

    /// (name, value) pairs of the scalar measures.
    pub fn scalars(&self) -> [(&'static str, f64); 4] {
        [("sdr_db", self.sdr_db), ("snr_db", self.snr_db), ("segsnr_db", self.segsnr_db), ("sd_db", self.sd_db)]
    }
}

/// Rows of `metric,value` for each report column, preceded by `#` metadata
/// lines. With a baseline the differences to it are added as a third column.
pub fn report_csv(report: &EvalReport, baseline: Option<&EvalReport>) -> String {
    let mut out = format!("# version {}\n", report.version);
    for (k, v) in &report.metadata {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out.push_str(if baseline.is_some() { "metric,value,delta\n" } else { "metric,value\n" });
    for (i, (name, v)) in report.scalars().iter().enumerate() {
        match baseline {
            Some(b) => {
                let _ = writeln!(out, "{name},{v},{}", v - b.scalars()[i].1);
            }
            None => {
                let _ = writeln!(out, "{name},{v}");
            }
        }
    }
    out
}

pub fn report_table(report: &EvalReport, baseline: Option<&EvalReport>) -> String {
    let mut out = String::new();
    for (k, v) in &report.metadata {
        let _ = writeln!(out, "{k}: {v}");
    }
    let _ = writeln!(out, "{:<12} {:>10} {:>10}", "metric", "value", if baseline.is_some() { "delta" } else { "" });
    for (i, (name, v)) in report.scalars().iter().enumerate() {
        match baseline {
            Some(b) => {
                let _ = writeln!(out, "{name:<12} {v:>10.3} {:>10.3}", v - b.scalars()[i].1);
            }
            None => {
                let _ = writeln!(out, "{name:<12} {v:>10.3}");
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowReport {
    /// Segmental ratio of filtered-speech energy to speech distortion.
    pub speech_segsnr_db: f64,
    /// Segmental noise attenuation.
    pub segnr_db: f64,
}

fn apply_gains(spec: &Spectrogram, gains: &Array2<f64>) -> Result<Vec<f64>> {
    if gains.dim() != spec.frames.dim() {
        return Err(Error::input(format!("gain matrix {:?} does not match spectrogram {:?}", gains.dim(), spec.frames.dim())));
    }
    let frames = Zip::from(&spec.frames).and(gains).map_collect(|&y, &g| y * g);
    istft(&Spectrogram { frames, config: spec.config })
}

/// Runs `enhancer` on clean + noise to get its K × T gains, applies them to
/// clean and noise separately and scores both. The untouched resynthesis of
/// clean and noise serves as reference so that edge samples cancel.
pub fn shadow_filter_eval<F>(clean: &[f64], noise: &[f64], cfg: &FrameConfig, enhancer: F) -> Result<ShadowReport>
where
    F: FnOnce(&Spectrogram) -> Result<Array2<f64>>,
{
    same_len(clean, noise)?;
    let mix: Vec<f64> = clean.iter().zip(noise).map(|(a, b)| a + b).collect();
    let gains = enhancer(&stft(&mix, cfg)?)?;
    let sc = stft(clean, cfg)?;
    let sn = stft(noise, cfg)?;
    let clean_ref = istft(&sc)?;
    let noise_ref = istft(&sn)?;
    let clean_out = apply_gains(&sc, &gains)?;
    let noise_out = apply_gains(&sn, &gains)?;
    let mut sp = Vec::new();
    let mut nr = Vec::new();
    for r in frames(clean_ref.len(), cfg) {
        let c = energy(&clean_ref[r.clone()]);
        if c > 0.0 {
            let filtered = energy(&clean_out[r.clone()]);
            let dist: f64 = clean_ref[r.clone()].iter().zip(&clean_out[r.clone()]).map(|(a, b)| (a - b).powi(2)).sum();
            sp.push(db_ratio(filtered, dist, SEGSNR_MIN_DB, SEGSNR_MAX_DB));
        }
        let n = energy(&noise_ref[r.clone()]);
        if n > 0.0 {
            nr.push(db_ratio(n, energy(&noise_out[r]), SEGNR_MIN_DB, SEGNR_MAX_DB));
        }
    }
    Ok(ShadowReport { speech_segsnr_db: mean_or(&sp, SEGSNR_MIN_DB), segnr_db: mean_or(&nr, SEGNR_MIN_DB) })
}

/// 2 × 2 grid; rows are the signal type (speech, babble), columns the model
/// (speech, babble).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub values: [[f64; 2]; 2],
}

impl ConfusionMatrix {
    /// Each row scores best on the diagonal.
    pub fn row_diagonal_dominant(&self, higher_is_better: bool) -> bool {
        let v = &self.values;
        if higher_is_better {
            v[0][0] > v[0][1] && v[1][1] > v[1][0]
        } else {
            v[0][0] < v[0][1] && v[1][1] < v[1][0]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossPrediction {
    pub sd: ConfusionMatrix,
    pub segsnr: ConfusionMatrix,
}

/// The two models a signal can be projected through.
#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    Speech(&'a SpeechHmm),
    Babble(&'a BabbleNhmm, &'a SpeechHmm),
}

/// Level iterations used when projecting a test signal.
const LEVEL_ITERS: usize = 20;

/// Projects a signal onto a model's NMF representation and resynthesises it
/// with the input phase.
pub fn reconstruct(signal: &[f64], model: ModelRef, cfg: &FrameConfig) -> Result<Vec<f64>> {
    let spec = stft(signal, cfg)?;
    let power = floor_power(&periodogram(&spec));
    let approx = match model {
        ModelRef::Speech(m) => {
            let level = m.estimate_level(power.view(), LEVEL_ITERS)?;
            m.nmf_project(level, power.view())?.approx
        }
        ModelRef::Babble(m, s) => {
            let basis = s.basis.view();
            let level = m.estimate_level(basis, power.view(), LEVEL_ITERS)?;
            m.project(basis, level, power.view())?.approx
        }
    };
    let frames = Zip::from(&spec.frames).and(&approx).map_collect(|&y, &a| {
        let mag = y.norm();
        if mag > 0.0 {
            y * (a.sqrt() / mag)
        } else {
            num_complex::Complex64::new(a.sqrt(), 0.0)
        }
    });
    istft(&Spectrogram { frames, config: *cfg })
}

/// Mean SD and SegSNR of every (signal type, model) cell. Reconstructions
/// are scored against the untouched resynthesis of their input.
pub fn cross_predict(speech_test: &[Vec<f64>], babble_test: &[Vec<f64>], speech: &SpeechHmm, babble: &BabbleNhmm, cfg: &FrameConfig) -> Result<CrossPrediction> {
    if speech_test.is_empty() || babble_test.is_empty() {
        return Err(Error::input("cross prediction needs speech and babble test signals"));
    }
    let models = [ModelRef::Speech(speech), ModelRef::Babble(babble, speech)];
    let mut sd = [[0.0; 2]; 2];
    let mut seg = [[0.0; 2]; 2];
    for (row, set) in [speech_test, babble_test].iter().enumerate() {
        for (col, model) in models.iter().enumerate() {
            for x in set.iter() {
                let reference = istft(&stft(x, cfg)?)?;
                let est = reconstruct(x, *model, cfg)?;
                sd[row][col] += spectral_distortion(&reference, &est, cfg)? / set.len() as f64;
                seg[row][col] += segsnr(&reference, &est, cfg)? / set.len() as f64;
            }
        }
    }
    Ok(CrossPrediction { sd: ConfusionMatrix { values: sd }, segsnr: ConfusionMatrix { values: seg } })
}

pub fn cross_prediction_csv(cp: &CrossPrediction) -> String {
    let mut out = format!("# version {REPORT_VERSION}\nmetric,signal,speech_model,babble_model\n");
    for (name, m) in [("sd_db", &cp.sd), ("segsnr_db", &cp.segsnr)] {
        for (row, sig) in ["speech", "babble"].iter().enumerate() {
            let _ = writeln!(out, "{name},{sig},{},{}", m.values[row][0], m.values[row][1]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.07).sin() + 0.3 * (i as f64 * 0.013).cos()).collect()
    }

    #[test]
    fn sdr_examples() {
        let r = tone(1000);
        let half: Vec<f64> = r.iter().map(|v| 0.5 * v).collect();
        assert_eq!(sdr(&r, &half).unwrap(), SDR_CLAMP_DB);
        let a = [1.0, 0.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0, 0.0];
        assert_eq!(sdr(&a, &b).unwrap(), -SDR_CLAMP_DB);
        let est = [1.0, (0.1f64).sqrt(), 0.0, 0.0];
        assert!((sdr(&a, &est).unwrap() - 10.0).abs() < 1e-12);
        assert!(sdr(&[0.0; 4], &a).is_err());
    }

    #[test]
    fn segsnr_examples() {
        let cfg = FrameConfig::default();
        let mut r = tone(3200);
        assert_eq!(segsnr(&r, &r, &cfg).unwrap(), SEGSNR_MAX_DB);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        assert!((segsnr(&r, &neg, &cfg).unwrap() + 10.0 * 4f64.log10()).abs() < 1e-12);
        // silent leading frames are skipped
        r[..640].iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(segsnr_frames(&r, &r, &cfg).unwrap().len(), cfg.n_frames(3200) - 3);
    }

    #[test]
    fn sd_examples() {
        let cfg = FrameConfig::default();
        let r = tone(3200);
        assert_eq!(spectral_distortion(&r, &r, &cfg).unwrap(), 0.0);
        let ten: Vec<f64> = r.iter().map(|v| 10.0 * v).collect();
        assert!((spectral_distortion(&r, &ten, &cfg).unwrap() - 20.0).abs() < 1e-9);
        assert!(spectral_distortion(&vec![0.0; 3200], &r, &cfg).is_err());
    }

    #[test]
    fn shadow_examples() {
        let cfg = FrameConfig::default();
        let clean = tone(3200);
        let noise: Vec<f64> = (0..3200).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let run = |g: f64| shadow_filter_eval(&clean, &noise, &cfg, |s| Ok(Array2::from_elem(s.frames.dim(), g))).unwrap();
        let one = run(1.0);
        assert_eq!(one.speech_segsnr_db, SEGSNR_MAX_DB);
        assert!(one.segnr_db.abs() < 1e-9);
        let half = run(0.5);
        assert!((half.segnr_db - 10.0 * 4f64.log10()).abs() < 1e-9);
        let zero = run(0.0);
        assert_eq!(zero.segnr_db, SEGNR_MAX_DB);
        assert_eq!(zero.speech_segsnr_db, SEGSNR_MIN_DB);
    }

    #[test]
    fn confusion_dominance() {
        let m = ConfusionMatrix { values: [[1.0, 2.0], [3.0, 0.5]] };
        assert!(m.row_diagonal_dominant(false));
        assert!(!m.row_diagonal_dominant(true));
    }
}

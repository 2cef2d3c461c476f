//! Framing, windowing, one-sided DFT and overlap-add synthesis.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Absolute floor on periodogram values fed to the models.
pub const POWER_FLOOR: f64 = 1e-20;
/// Relative floor, as a fraction of the frame's mean power.
pub const RELATIVE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann; sums to exactly 1 at 50% overlap.
    Hann,
    /// Square root of the periodic Hann window; not overlap-add invariant.
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig { frame_len: 320, hop: 160, window: WindowKind::Hann, sample_rate: 16_000 }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return Err(Error::input(format!("frame length {} must be even and ≥ 2", self.frame_len)));
        }
        if self.hop * 2 != self.frame_len {
            return Err(Error::input(format!("hop {} must be half the frame length", self.hop)));
        }
        if self.sample_rate == 0 {
            return Err(Error::input("sample rate must be positive"));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins.
    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Signal length whose frames exactly tile `n_frames` frames.
    pub fn signal_len(&self, n_frames: usize) -> usize {
        (n_frames.max(1) - 1) * self.hop + self.frame_len
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.frame_len;
        let hann = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos());
        match self.window {
            WindowKind::Hann => hann.collect(),
            WindowKind::SqrtHann => hann.map(f64::sqrt).collect(),
        }
    }

    /// The constant that shifted windows sum to, if there is one.
    pub fn cola_constant(&self) -> Option<f64> {
        let w = self.window();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| (0..self.frame_len / self.hop).map(|m| w[n + m * self.hop]).sum())
            .collect();
        let c = sums[0];
        sums.iter().all(|s| (s - c).abs() <= 1e-12 * c.abs()).then_some(c)
    }
}

/// Complex one-sided STFT: `frames[[k, t]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Array2<Complex64>,
    pub config: FrameConfig,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn stft(signal: &[f64], cfg: &FrameConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if signal.len() < cfg.frame_len {
        return Err(Error::input(format!(
            "signal of {} samples is shorter than one frame ({})",
            signal.len(),
            cfg.frame_len
        )));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("sample {i} is not finite")));
    }
    let n = cfg.frame_len;
    let k_bins = cfg.n_bins();
    let t_frames = cfg.n_frames(signal.len());
    let window = cfg.window();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut frames = Array2::zeros((k_bins, t_frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..t_frames {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(window[i] * signal[start + i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..k_bins {
            frames[[k, t]] = buf[k];
        }
    }
    Ok(Spectrogram { frames, config: *cfg })
}

/// Overlap-add synthesis. Interior samples `[hop, T·hop)` reproduce the
/// analysed signal exactly when the spectrogram is untouched.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let cfg = &spec.config;
    cfg.validate()?;
    let scale = cfg
        .cola_constant()
        .ok_or_else(|| Error::input(format!("{:?} window does not overlap-add to a constant", cfg.window)))?;
    let n = cfg.frame_len;
    if spec.n_bins() != cfg.n_bins() {
        return Err(Error::input(format!("spectrogram has {} bins, expected {}", spec.n_bins(), cfg.n_bins())));
    }
    let t_frames = spec.n_frames();
    let mut out = vec![0.0; if t_frames == 0 { 0 } else { cfg.signal_len(t_frames) }];
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let norm = 1.0 / (n as f64 * scale);
    for t in 0..t_frames {
        let col = spec.frames.column(t);
        buf[0] = Complex64::new(col[0].re, 0.0);
        buf[n / 2] = Complex64::new(col[n / 2].re, 0.0);
        for k in 1..n / 2 {
            buf[k] = col[k];
            buf[n - k] = col[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for (i, v) in buf.iter().enumerate() {
            out[start + i] += v.re * norm;
        }
    }
    Ok(out)
}

pub fn periodogram(spec: &Spectrogram) -> Array2<f64> {
    spec.frames.mapv(|z| z.norm_sqr())
}

/// Lower bound applied to one frame of power values.
pub fn frame_floor(column: ArrayView1<f64>) -> f64 {
    let mean = column.mean().unwrap_or(0.0);
    (RELATIVE_FLOOR * mean).max(POWER_FLOOR)
}

/// Clamps every value from below so that logs and reciprocals stay finite.
pub fn floor_power(power: &Array2<f64>) -> Array2<f64> {
    let mut out = power.clone();
    for mut col in out.columns_mut() {
        let floor = frame_floor(col.view());
        col.mapv_inplace(|v| v.max(floor));
    }
    out
}

/// Periodogram of a waveform, floored for model evaluation.
pub fn power_spectrogram(signal: &[f64], cfg: &FrameConfig) -> Result<Array2<f64>> {
    Ok(floor_power(&periodogram(&stft(signal, cfg)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count() {
        let cfg = FrameConfig::default();
        assert_eq!(stft(&vec![0.0; 480], &cfg).unwrap().n_frames(), 2);
        assert_eq!(cfg.n_frames(319), 0);
        assert_eq!(cfg.signal_len(5), 960);
        assert!(stft(&vec![0.0; 319], &cfg).is_err());
        let mut bad = vec![0.0; 400];
        bad[7] = f64::NAN;
        assert!(stft(&bad, &cfg).is_err());
    }

    #[test]
    fn zero_signal_single_frame() {
        let spec = stft(&vec![0.0; 320], &FrameConfig::default()).unwrap();
        assert_eq!(spec.frames.dim(), (161, 1));
        assert!(spec.frames.iter().all(|z| z.norm() == 0.0));
        assert!(istft(&spec).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cosine_peaks_at_its_bin() {
        let x: Vec<f64> = (0..640).map(|n| (2.0 * PI * 10.0 * n as f64 / 320.0).cos()).collect();
        let p = periodogram(&stft(&x, &FrameConfig::default()).unwrap());
        for t in 0..p.ncols() {
            let col = p.column(t);
            let arg = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(arg, 10);
        }
    }

    #[test]
    fn periodogram_values() {
        let cfg = FrameConfig { frame_len: 4, hop: 2, ..FrameConfig::default() };
        let mut frames = Array2::zeros((3, 1));
        frames[[1, 0]] = Complex64::new(3.0, 4.0);
        let spec = Spectrogram { frames, config: cfg };
        let p = periodogram(&spec);
        assert_eq!(p[[1, 0]], 25.0);
        assert_eq!(p[[0, 0]], 0.0);
        let conj = Spectrogram { frames: spec.frames.mapv(|z| z.conj()), config: cfg };
        assert_eq!(periodogram(&conj), p);
    }

    #[test]
    fn windows() {
        let cfg = FrameConfig::default();
        assert_eq!(cfg.cola_constant(), Some(1.0));
        let sqrt = FrameConfig { window: WindowKind::SqrtHann, ..cfg };
        assert!(sqrt.cola_constant().is_none());
        let spec = stft(&vec![1.0; 640], &sqrt).unwrap();
        assert!(istft(&spec).is_err());
    }

    #[test]
    fn floor_keeps_values_positive() {
        let mut p = Array2::zeros((4, 2));
        p[[0, 1]] = 8.0;
        let f = floor_power(&p);
        assert_eq!(f[[0, 0]], POWER_FLOOR);
        assert_eq!(f[[1, 1]], 2e-12);
        assert_eq!(f[[0, 1]], 8.0);
    }

    #[test]
    fn config_validation() {
        assert!(FrameConfig { hop: 100, ..FrameConfig::default() }.validate().is_err());
        assert!(FrameConfig { frame_len: 321, hop: 160, ..FrameConfig::default() }.validate().is_err());
        assert!(FrameConfig { sample_rate: 0, ..FrameConfig::default() }.validate().is_err());
    }
}

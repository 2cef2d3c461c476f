//! Direct O(N²) DFT of Hann-windowed frames.

use std::f64::consts::PI;

pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided |DFT|² of every full frame; frames[t][k].
pub fn periodogram(signal: &[f64], frame_len: usize, hop: usize) -> Vec<Vec<f64>> {
    let w = hann(frame_len);
    let mut out = Vec::new();
    let mut start = 0;
    while start + frame_len <= signal.len() {
        let frame: Vec<f64> = (0..frame_len).map(|i| w[i] * signal[start + i]).collect();
        let row = (0..=frame_len / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * i) as f64 / frame_len as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        out.push(row);
        start += hop;
    }
    out
}

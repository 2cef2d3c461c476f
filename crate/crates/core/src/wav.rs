//! Mono WAV input and output.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Reads a mono file as samples in [−1, 1] together with its sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::input(format!("{}: {} channels, only mono is supported", path.display(), spec.channels)));
    }
    if spec.sample_rate != 16_000 {
        log::warn!("{}: sample rate {} Hz, models assume 16000 Hz", path.display(), spec.sample_rate);
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32_768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::input(format!("{}: unsupported sample format {fmt:?}/{bits} bit", path.display())))
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Writes mono samples; 16-bit output is clipped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32, format: SampleFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        SampleFormat::Pcm16 => (16, hound::SampleFormat::Int),
        SampleFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: bits, sample_format };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        match format {
            SampleFormat::Pcm16 => writer.write_sample((s * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16)?,
            SampleFormat::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.05).sin() * 0.5).collect();
        let f = dir.path().join("f.wav");
        write_wav(&f, &x, 16_000, SampleFormat::Float32).unwrap();
        let (y, sr) = read_wav(&f).unwrap();
        assert_eq!(sr, 16_000);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-7));
        let p = dir.path().join("p.wav");
        write_wav(&p, &x, 8_000, SampleFormat::Pcm16).unwrap();
        let (z, sr) = read_wav(&p).unwrap();
        assert_eq!(sr, 8_000);
        assert!(x.iter().zip(&z).all(|(a, b)| (a - b).abs() <= 0.5 / 32_768.0 + 1e-12));
    }
}

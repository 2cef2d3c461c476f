use gnhmm::corpus::{gen_synthetic_speech, measured_snr_db, mix_at_snr, synth_babble, MixSpec, SpeechGenConfig};
use gnhmm::dsp::{istft, periodogram, stft, FrameConfig, Spectrogram};
use gnhmm_oracle::dft;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_interior(seed in 0u64..10_000, extra in 0usize..700, half in prop::sample::select(vec![16usize, 64, 160])) {
        let cfg = FrameConfig { frame_len: 2 * half, hop: half, ..Default::default() };
        let x = noise(4 * cfg.frame_len + extra, seed);
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        let t = cfg.n_frames(x.len());
        let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = (cfg.hop..t * cfg.hop).map(|i| (x[i] - y[i]).abs()).fold(0.0, f64::max);
        prop_assert!(err / peak < 1e-9);
    }

    #[test]
    fn parseval_per_frame(seed in 0u64..10_000) {
        let cfg = FrameConfig { frame_len: 64, hop: 32, ..Default::default() };
        let x = noise(400, seed);
        let p = periodogram(&stft(&x, &cfg).unwrap());
        let w = cfg.window();
        for t in 0..p.ncols() {
            let time: f64 = (0..64).map(|i| (w[i] * x[t * 32 + i]).powi(2)).sum();
            let col = p.column(t);
            let freq = (col[0] + col[32] + 2.0 * (1..32).map(|k| col[k]).sum::<f64>()) / 64.0;
            prop_assert!((time - freq).abs() < 1e-9 * time);
        }
    }

    #[test]
    fn periodogram_ignores_global_phase(seed in 0u64..10_000, phase in 0.0f64..6.3) {
        let cfg = FrameConfig { frame_len: 32, hop: 16, ..Default::default() };
        let s = stft(&noise(200, seed), &cfg).unwrap();
        let rot = Spectrogram { frames: s.frames.mapv(|z| z * Complex64::from_polar(1.0, phase)), config: s.config };
        let conj = Spectrogram { frames: s.frames.mapv(|z| z.conj()), config: s.config };
        let (a, b, c) = (periodogram(&s), periodogram(&rot), periodogram(&conj));
        for ((x, y), z) in a.iter().zip(b.iter()).zip(c.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.max(1e-300));
            prop_assert_eq!(x, z);
        }
    }

    #[test]
    fn mix_hits_requested_snr(seed in 0u64..10_000, snr in -10.0f64..30.0) {
        let cfg = FrameConfig::default();
        let speech = noise(8000, seed);
        let n = noise(5000, seed + 1);
        let m = mix_at_snr(&speech, &n, snr, seed, &cfg).unwrap();
        prop_assert!((measured_snr_db(&speech, &m.noise, &cfg).unwrap() - snr).abs() < 0.01);
        for i in 0..speech.len() {
            prop_assert!((m.noisy[i] - speech[i] - m.noise[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn periodogram_matches_direct_dft() {
    let cfg = FrameConfig { frame_len: 64, hop: 32, ..Default::default() };
    let x = noise(500, 3);
    let p = periodogram(&stft(&x, &cfg).unwrap());
    let q = dft::periodogram(&x, 64, 32);
    assert_eq!(p.ncols(), q.len());
    for t in 0..q.len() {
        for k in 0..33 {
            assert!((p[[k, t]] - q[t][k]).abs() < 1e-10 * q[t][k].max(1.0));
        }
    }
}

#[test]
fn istft_is_linear() {
    let cfg = FrameConfig::default();
    let s = stft(&noise(2000, 9), &cfg).unwrap();
    let y = istft(&s).unwrap();
    let y3 = istft(&Spectrogram { frames: s.frames.mapv(|z| z * 3.0), config: cfg }).unwrap();
    for (a, b) in y.iter().zip(&y3) {
        assert!((3.0 * a - b).abs() < 1e-12);
    }
    let z = istft(&Spectrogram { frames: s.frames.mapv(|_| Complex64::new(0.0, 0.0)), config: cfg }).unwrap();
    assert!(z.iter().all(|v| *v == 0.0));
}

#[test]
fn babble_bookkeeping() {
    let cfg = FrameConfig::default();
    let a = noise(16000, 1);
    // one source: the normalised source itself
    let one = synth_babble(&[a.clone()], &MixSpec::equal_levels(1, 0), &cfg).unwrap();
    let peak = one.signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - 0.9).abs() < 1e-12);
    // two identical sources: twice one source before peak scaling
    let two = synth_babble(&[a.clone(), a.clone()], &MixSpec::equal_levels(2, 0), &cfg).unwrap();
    for (x, y) in one.signal.iter().zip(&two.signal) {
        assert!((x / one.scale * 2.0 - y / two.scale).abs() < 1e-9);
    }
    // ten independent equal-level speakers each carry a tenth of the power
    let sources: Vec<Vec<f64>> = (0..10).map(|i| gen_synthetic_speech(&SpeechGenConfig { n_bins: 161, ..Default::default() }, 200, Some(&cfg), 50 + i).unwrap().waveform.unwrap()).collect();
    let b = synth_babble(&sources, &MixSpec::equal_levels(10, 0), &cfg).unwrap();
    let total: f64 = b.signal.iter().map(|v| v * v).sum::<f64>() / b.signal.len() as f64;
    let len = b.signal.len();
    for s in &sources {
        let level = gnhmm::corpus::active_level(&s[..len], &cfg).unwrap();
        let p: f64 = s[..len].iter().map(|v| v * v).sum::<f64>() / len as f64 * b.scale * b.scale / level;
        assert!((10.0 * (p / (total / 10.0)).log10()).abs() < 0.5, "{p} vs {}", total / 10.0);
    }
}

#[test]
fn generator_statistics() {
    let gen = SpeechGenConfig { n_states: 3, n_bins: 9, model_seed: 4, ..Default::default() };
    let a = gen_synthetic_speech(&gen, 10_000, None, 8).unwrap();
    let b = gen_synthetic_speech(&gen, 10_000, None, 8).unwrap();
    assert_eq!(a.power, b.power);
    assert_eq!(a.states, b.states);
    let stationary = a.model.initial().unwrap();
    let freq = gnhmm::corpus::state_frequencies(&a.states, 3);
    for i in 0..3 {
        assert!((freq[i] - stationary[i]).abs() < 0.02);
    }
    // per-state mean spectrum of power / gain against α⊙b, relative ℓ2
    let mean = a.model.nmf_basis();
    for i in 0..3 {
        let ts: Vec<usize> = (0..10_000).filter(|&t| a.states[t] == i).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..9 {
            let m = ts.iter().map(|&t| a.power[[k, t]] / a.gains[t]).sum::<f64>() / ts.len() as f64;
            num += (m - mean[[k, i]]).powi(2);
            den += mean[[k, i]].powi(2);
        }
        assert!((num / den).sqrt() < 0.03, "state {i}");
    }
}

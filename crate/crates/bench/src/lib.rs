//! Fixtures shared by the benchmarks: full-size synthetic models and
//! signals built deterministically from the library's generators.

use gnhmm::corpus::{gen_synthetic_speech, synthetic_speech_model, SpeechGenConfig};
use gnhmm::dsp::FrameConfig;
use gnhmm::markov::normalize_rows;
use gnhmm::{BabbleNhmm, CompositeModel, SpeechHmm};
use ndarray::{Array1, Array2};
use num_complex::Complex64;

pub const SPEECH_STATES: usize = 55;
pub const BABBLE_STATES: usize = 10;

pub fn frame() -> FrameConfig {
    FrameConfig::default()
}

pub fn speech_model() -> SpeechHmm {
    let gen = SpeechGenConfig { n_states: SPEECH_STATES, n_bins: frame().n_bins(), model_seed: 3, ..Default::default() };
    synthetic_speech_model(&gen).expect("valid generator settings")
}

/// Babble states mixing every speech state with smoothly varying weights.
pub fn babble_model(speech: &SpeechHmm) -> BabbleNhmm {
    let n = speech.n_states();
    let values = Array2::from_shape_fn((n, BABBLE_STATES), |(i, j)| 1.0 + ((i * 7 + j * 13) % 11) as f64 / 11.0);
    let trans = normalize_rows(&Array2::from_shape_fn((BABBLE_STATES, BABBLE_STATES), |(i, j)| if i == j { 8.0 } else { 1.0 }));
    BabbleNhmm::new(trans, values, Array1::ones(speech.n_bins()), 15.0, speech.basis.view()).expect("valid babble model")
}

pub fn composite() -> CompositeModel {
    let speech = speech_model();
    let babble = babble_model(&speech);
    CompositeModel::new(&speech, &babble).expect("matching models")
}

/// `frames` hops of synthetic speech plus a quieter independent recording.
pub fn noisy_signal(frames: usize) -> Vec<f64> {
    let gen = SpeechGenConfig { n_bins: frame().n_bins(), ..Default::default() };
    let f = frame();
    let a = gen_synthetic_speech(&gen, frames, Some(&f), 1).expect("speech").waveform.expect("waveform");
    let b = gen_synthetic_speech(&gen, frames, Some(&f), 2).expect("speech").waveform.expect("waveform");
    a.iter().zip(&b).map(|(x, y)| x + 0.7 * y).collect()
}

/// A deterministic complex frame with broadband power around `scale`.
pub fn complex_frame(n_bins: usize, scale: f64) -> Array1<Complex64> {
    (0..n_bins).map(|k| Complex64::from_polar(scale * (1.0 + 0.5 * (k as f64 * 0.37).sin()), k as f64 * 1.3)).collect()
}

//! Versioned JSON model files.
//!
//! Both files are a single JSON object with a `format` tag, an integer
//! `version`, the dimensions, parameter arrays as nested lists (rows first)
//! and a `provenance` block. A babble file names the SHA-256 of the speech
//! model file it was trained against.

use crate::babble::BabbleNhmm;
use crate::dsp::FrameConfig;
use crate::error::{Error, Result};
use crate::speech::SpeechHmm;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

pub const SPEECH_FORMAT: &str = "gnhmm-speech";
pub const BABBLE_FORMAT: &str = "gnhmm-babble";
pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Digest of a set of signals (length-prefixed little-endian samples).
pub fn corpus_digest<S: AsRef<[f64]>>(signals: &[S]) -> String {
    let mut h = Sha256::new();
    for s in signals {
        let s = s.as_ref();
        h.update((s.len() as u64).to_le_bytes());
        for v in s {
            h.update(v.to_le_bytes());
        }
    }
    let mut out = String::with_capacity(64);
    for b in h.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub frame: FrameConfig,
    pub corpus_sha256: String,
    pub n_recordings: usize,
    pub iterations: usize,
    pub seed: u64,
    pub loglik_trace: Vec<f64>,
    /// Per-recording gain levels found in training.
    pub levels: Vec<f64>,
    /// Newton iterations in CCCP subproblems per EM iteration (babble only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cccp_iterations: Vec<usize>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Result<Array2<f64>> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::input(format!("{name} is not {n_rows}×{n_cols}")));
    }
    Ok(Array2::from_shape_vec((n_rows, n_cols), rows.concat()).expect("shape checked"))
}

fn check_header(format: &str, version: u32, want: &str) -> Result<()> {
    if format != want {
        return Err(Error::input(format!("expected a {want} file, found {format:?}")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::input(format!("unsupported {want} version {version}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeechFile {
    format: String,
    version: u32,
    n_states: usize,
    n_bins: usize,
    trans: Vec<Vec<f64>>,
    basis: Vec<Vec<f64>>,
    shape: Vec<f64>,
    gain_shape: f64,
    provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BabbleFile {
    format: String,
    version: u32,
    n_states: usize,
    n_bins: usize,
    n_speech_states: usize,
    speech_model_sha256: String,
    trans: Vec<Vec<f64>>,
    /// N̄ × N̈; column j weights state j.
    state_values: Vec<Vec<f64>>,
    shape: Vec<f64>,
    gain_shape: f64,
    provenance: Provenance,
}

pub fn speech_to_json(model: &SpeechHmm, provenance: &Provenance) -> Result<String> {
    model.validate()?;
    let f = SpeechFile {
        format: SPEECH_FORMAT.into(),
        version: FORMAT_VERSION,
        n_states: model.n_states(),
        n_bins: model.n_bins(),
        trans: rows(&model.trans),
        basis: rows(&model.basis),
        shape: model.shape.to_vec(),
        gain_shape: model.gain_shape,
        provenance: provenance.clone(),
    };
    Ok(serde_json::to_string_pretty(&f)? + "\n")
}

#[derive(Debug, Clone)]
pub struct LoadedSpeech {
    pub model: SpeechHmm,
    pub provenance: Provenance,
    /// SHA-256 of the file contents.
    pub sha256: String,
}

pub fn speech_from_json(text: &str) -> Result<LoadedSpeech> {
    let f: SpeechFile = serde_json::from_str(text)?;
    check_header(&f.format, f.version, SPEECH_FORMAT)?;
    let (n, k) = (f.n_states, f.n_bins);
    if f.shape.len() != k {
        return Err(Error::input(format!("shape has {} entries for {k} bins", f.shape.len())));
    }
    let model = SpeechHmm::new(matrix("trans", &f.trans, n, n)?, matrix("basis", &f.basis, k, n)?, Array1::from(f.shape), f.gain_shape)?;
    f.provenance.frame.validate()?;
    if f.provenance.frame.n_bins() != k {
        return Err(Error::input("frame configuration does not match the bin count"));
    }
    Ok(LoadedSpeech { model, provenance: f.provenance, sha256: sha256_hex(text.as_bytes()) })
}

pub fn babble_to_json(model: &BabbleNhmm, speech: &LoadedSpeech, provenance: &Provenance) -> Result<String> {
    model.validate(speech.model.basis.view())?;
    let f = BabbleFile {
        format: BABBLE_FORMAT.into(),
        version: FORMAT_VERSION,
        n_states: model.n_states(),
        n_bins: speech.model.n_bins(),
        n_speech_states: speech.model.n_states(),
        speech_model_sha256: speech.sha256.clone(),
        trans: rows(&model.trans),
        state_values: rows(&model.state_values),
        shape: model.shape.to_vec(),
        gain_shape: model.gain_shape,
        provenance: provenance.clone(),
    };
    Ok(serde_json::to_string_pretty(&f)? + "\n")
}

#[derive(Debug, Clone)]
pub struct LoadedBabble {
    pub model: BabbleNhmm,
    pub provenance: Provenance,
    pub speech_model_sha256: String,
    pub sha256: String,
}

/// Parses a babble file and checks it against the speech model it is used
/// with. A different speech-model hash with matching dimensions only warns.
pub fn babble_from_json(text: &str, speech: &LoadedSpeech) -> Result<LoadedBabble> {
    let f: BabbleFile = serde_json::from_str(text)?;
    check_header(&f.format, f.version, BABBLE_FORMAT)?;
    let (k, ns) = (speech.model.n_bins(), speech.model.n_states());
    if f.n_bins != k || f.n_speech_states != ns {
        return Err(Error::input(format!(
            "babble model was built for K={}, N̄={} but the speech model has K={k}, N̄={ns}",
            f.n_bins, f.n_speech_states
        )));
    }
    if f.speech_model_sha256 != speech.sha256 {
        log::warn!("babble model was trained against speech model {}, using {}", f.speech_model_sha256, speech.sha256);
    }
    if f.shape.len() != k {
        return Err(Error::input(format!("shape has {} entries for {k} bins", f.shape.len())));
    }
    let m = f.n_states;
    let model = BabbleNhmm::new(
        matrix("trans", &f.trans, m, m)?,
        matrix("state_values", &f.state_values, ns, m)?,
        Array1::from(f.shape),
        f.gain_shape,
        speech.model.basis.view(),
    )?;
    Ok(LoadedBabble { model, provenance: f.provenance, speech_model_sha256: f.speech_model_sha256, sha256: sha256_hex(text.as_bytes()) })
}

pub fn load_speech(path: impl AsRef<Path>) -> Result<LoadedSpeech> {
    speech_from_json(&std::fs::read_to_string(path)?)
}

pub fn load_babble(path: impl AsRef<Path>, speech: &LoadedSpeech) -> Result<LoadedBabble> {
    babble_from_json(&std::fs::read_to_string(path)?, speech)
}

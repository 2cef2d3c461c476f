//! Subcommand bodies. Each one reads its inputs, runs the library and writes
//! its outputs plus the resolved configuration into one directory.

use crate::config::{RunConfig, SNAPSHOT};
use anyhow::{bail, Context, Result};
use gnhmm::babble::train_babble;
use gnhmm::corpus::{gen_synthetic_speech, measured_snr_db, mix_at_snr, parse_manifest, synth_babble, ManifestEntry, MixSpec, Source};
use gnhmm::dsp::{periodogram, power_spectrogram, stft};
use gnhmm::enhancer::{diagnostics_lines, enhance_signal, enhance_spectrogram, initial_levels};
use gnhmm::metrics::{cross_predict, cross_prediction_csv, report_csv, report_table, shadow_filter_eval};
use gnhmm::model_io::{babble_to_json, corpus_digest, load_babble, load_speech, speech_to_json, LoadedBabble, LoadedSpeech};
use gnhmm::speech::train;
use gnhmm::wav::{read_wav, write_wav, SampleFormat};
use gnhmm::{CompositeModel, EvalReport, Provenance};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const SPEECH_MODEL: &str = "speech_model.json";
pub const BABBLE_MODEL: &str = "babble_model.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const ENHANCED: &str = "enhanced.wav";
pub const DIAGNOSTICS: &str = "diagnostics.jsonl";

/// Creates `out`, records the input paths and writes the snapshot.
fn begin(cfg: &mut RunConfig, out: &Path, inputs: &[(&str, &Path)]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (key, p) in inputs {
        let abs = std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))?;
        cfg.paths.insert(key.to_string(), abs.to_string_lossy().into_owned());
    }
    write(out.join(SNAPSHOT), &cfg.to_toml()?)
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_audio(path: PathBuf, samples: &[f64], sample_rate: u32) -> Result<()> {
    write_wav(&path, samples, sample_rate, SampleFormat::Float32).with_context(|| format!("writing {}", path.display()))
}

fn read_audio(path: &Path) -> Result<(Vec<f64>, u32)> {
    read_wav(path).with_context(|| format!("reading {}", path.display()))
}

fn required(cfg: &RunConfig, key: &str, flag: Option<&Path>) -> Result<PathBuf> {
    cfg.path(key, flag)
        .with_context(|| format!("missing --{} (and no {key} path in the configuration)", key.replace('_', "-")))
}

fn manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_manifest(&text, base)?)
}

/// Entries with `role` and their line positions (used as default seeds).
fn with_role<'a>(entries: &'a [ManifestEntry], role: &str) -> Vec<(usize, &'a ManifestEntry)> {
    entries.iter().enumerate().filter(|(_, e)| e.role == role).collect()
}

/// Distinct per-speaker seed derived from an entry seed.
fn speaker_seed(seed: u64, speaker: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(speaker as u64 + 1)
}

fn synth_speech(cfg: &RunConfig, entry: &ManifestEntry, seed: u64) -> Result<Vec<f64>> {
    let mut gen = cfg.synth.generator(&cfg.frame);
    if let Some(m) = entry.param("model_seed")? {
        gen.model_seed = m;
    }
    let frames = entry.param("frames")?.unwrap_or(cfg.synth.frames);
    let s = gen_synthetic_speech(&gen, frames, Some(&cfg.frame), seed)?;
    Ok(s.waveform.expect("waveform requested"))
}

/// Loads or synthesises one manifest signal. Synthetic babble sums
/// `speakers` synthetic talkers at equal active level.
fn signal(cfg: &RunConfig, entry: &ManifestEntry, position: usize, babble: bool) -> Result<(Vec<f64>, u32)> {
    match &entry.source {
        Source::File(p) => read_audio(p),
        Source::Synth => {
            let seed = entry.param("seed")?.unwrap_or(cfg.synth.sample_seed + position as u64);
            if !babble {
                return Ok((synth_speech(cfg, entry, seed)?, cfg.frame.sample_rate));
            }
            let speakers = entry.param("speakers")?.unwrap_or(cfg.synth.speakers);
            let sources = (0..speakers)
                .map(|m| synth_speech(cfg, entry, speaker_seed(seed, m)))
                .collect::<Result<Vec<_>>>()?;
            let mix = synth_babble(&sources, &MixSpec::equal_levels(speakers, seed), &cfg.frame)?;
            Ok((mix.signal, cfg.frame.sample_rate))
        }
    }
}

fn signals(cfg: &RunConfig, entries: &[ManifestEntry], role: &str, babble: bool) -> Result<Vec<Vec<f64>>> {
    let chosen = with_role(entries, role);
    if chosen.is_empty() {
        bail!("manifest has no {role} entries");
    }
    chosen
        .par_iter()
        .map(|(pos, e)| signal(cfg, e, *pos, babble).map(|s| s.0))
        .collect()
}

fn spectrograms(cfg: &RunConfig, signals: &[Vec<f64>]) -> Result<Vec<Array2<f64>>> {
    Ok(signals.par_iter().map(|s| power_spectrogram(s, &cfg.frame)).collect::<gnhmm::Result<_>>()?)
}

fn loglik_log(trace: &[f64], extra: Option<&[usize]>) -> String {
    let mut out = String::from(if extra.is_some() { "iteration,loglik,cccp_iterations\n" } else { "iteration,loglik\n" });
    for (i, ll) in trace.iter().enumerate() {
        match extra {
            Some(c) => out.push_str(&format!("{i},{ll},{}\n", c.get(i).map(ToString::to_string).unwrap_or_default())),
            None => out.push_str(&format!("{i},{ll}\n")),
        }
    }
    out
}

pub fn train_speech(mut cfg: RunConfig, manifest_flag: Option<&Path>, out: &Path) -> Result<()> {
    let mpath = required(&cfg, "manifest", manifest_flag)?;
    begin(&mut cfg, out, &[("manifest", &mpath)])?;
    let entries = manifest(&mpath)?;
    let sigs = signals(&cfg, &entries, "speech-train", false)?;
    let corpus = spectrograms(&cfg, &sigs)?;
    let trained = train(&corpus, &cfg.speech_train)?;
    let prov = Provenance {
        frame: cfg.frame,
        corpus_sha256: corpus_digest(&sigs),
        n_recordings: sigs.len(),
        iterations: cfg.speech_train.n_iters,
        seed: cfg.speech_train.seed,
        loglik_trace: trained.loglik_trace.clone(),
        levels: trained.levels.clone(),
        cccp_iterations: Vec::new(),
    };
    write(out.join(SPEECH_MODEL), &speech_to_json(&trained.model, &prov)?)?;
    write(out.join(TRAIN_LOG), &loglik_log(&trained.loglik_trace, None))?;
    if trained.violations > 0 {
        log::warn!("{} EM iterations lowered the likelihood beyond tolerance", trained.violations);
    }
    Ok(())
}

pub fn train_babble_cmd(mut cfg: RunConfig, manifest_flag: Option<&Path>, speech_flag: Option<&Path>, out: &Path) -> Result<()> {
    let mpath = required(&cfg, "manifest", manifest_flag)?;
    let spath = required(&cfg, "speech_model", speech_flag)?;
    begin(&mut cfg, out, &[("manifest", &mpath), ("speech_model", &spath)])?;
    let speech = load_speech(&spath).with_context(|| format!("loading {}", spath.display()))?;
    check_frame(&cfg, &speech)?;
    let entries = manifest(&mpath)?;
    let sigs = signals(&cfg, &entries, "babble-train", true)?;
    let corpus = spectrograms(&cfg, &sigs)?;
    let trained = train_babble(&corpus, &speech.model, &cfg.babble_train, None)?;
    let prov = Provenance {
        frame: cfg.frame,
        corpus_sha256: corpus_digest(&sigs),
        n_recordings: sigs.len(),
        iterations: cfg.babble_train.n_iters,
        seed: cfg.babble_train.seed,
        loglik_trace: trained.loglik_trace.clone(),
        levels: trained.levels.clone(),
        cccp_iterations: trained.cccp_iterations.clone(),
    };
    write(out.join(BABBLE_MODEL), &babble_to_json(&trained.model, &speech, &prov)?)?;
    write(out.join(TRAIN_LOG), &loglik_log(&trained.loglik_trace, Some(&trained.cccp_iterations)))?;
    if trained.violations > 0 {
        log::warn!("{} EM iterations lowered the likelihood beyond tolerance", trained.violations);
    }
    Ok(())
}

fn check_frame(cfg: &RunConfig, speech: &LoadedSpeech) -> Result<()> {
    if speech.model.n_bins() != cfg.frame.n_bins() {
        bail!("speech model has {} bins but the frame configuration gives {}", speech.model.n_bins(), cfg.frame.n_bins());
    }
    if speech.provenance.frame != cfg.frame {
        log::warn!("speech model was trained with frame settings {:?}", speech.provenance.frame);
    }
    Ok(())
}

fn load_models(cfg: &RunConfig, speech: &Path, babble: &Path) -> Result<(LoadedSpeech, LoadedBabble)> {
    let s = load_speech(speech).with_context(|| format!("loading {}", speech.display()))?;
    check_frame(cfg, &s)?;
    let b = load_babble(babble, &s).with_context(|| format!("loading {}", babble.display()))?;
    Ok((s, b))
}

/// Configured starting levels; a missing one is guessed from the signal.
fn start_levels(cfg: &RunConfig, model: &CompositeModel, noisy: &[f64]) -> Result<(f64, f64)> {
    let (theta, gamma) = match (cfg.levels.speech, cfg.levels.babble) {
        (Some(t), Some(g)) => (t, g),
        (t, g) => {
            let power = periodogram(&stft(noisy, &cfg.frame)?);
            let guess = initial_levels(model, &cfg.enhancer, power.view());
            (t.unwrap_or(guess.0), g.unwrap_or(guess.1))
        }
    };
    Ok((theta, gamma))
}

pub fn enhance(mut cfg: RunConfig, input: Option<&Path>, speech: Option<&Path>, babble: Option<&Path>, out: &Path) -> Result<()> {
    let ipath = required(&cfg, "input", input)?;
    let spath = required(&cfg, "speech_model", speech)?;
    let bpath = required(&cfg, "babble_model", babble)?;
    begin(&mut cfg, out, &[("input", &ipath), ("speech_model", &spath), ("babble_model", &bpath)])?;
    let (s, b) = load_models(&cfg, &spath, &bpath)?;
    let model = CompositeModel::new(&s.model, &b.model)?;
    let (noisy, rate) = read_audio(&ipath)?;
    let levels = start_levels(&cfg, &model, &noisy)?;
    let (signal, enhanced) = enhance_signal(&noisy, &cfg.frame, &model, &cfg.enhancer, Some(levels))?;
    write_audio(out.join(ENHANCED), &signal, rate)?;
    write(out.join(DIAGNOSTICS), &diagnostics_lines(&enhanced.diagnostics)?)
}

#[derive(Serialize)]
struct Evaluation {
    enhanced: EvalReport,
    noisy: EvalReport,
    delta: BTreeMap<&'static str, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shadow: Option<gnhmm::ShadowReport>,
}

pub struct EvalInputs<'a> {
    pub clean: Option<&'a Path>,
    pub noise: Option<&'a Path>,
    pub noisy: Option<&'a Path>,
    pub enhanced: Option<&'a Path>,
    pub speech_model: Option<&'a Path>,
    pub babble_model: Option<&'a Path>,
}

/// Scores an enhanced signal (given, or produced with the models) and the
/// noisy input against the clean reference. With models and separate noise
/// the shadow-filtering measures are added.
pub fn evaluate(mut cfg: RunConfig, io: EvalInputs, out: &Path) -> Result<()> {
    let clean_p = required(&cfg, "clean", io.clean)?;
    let noise_p = cfg.path("noise", io.noise);
    let noisy_p = cfg.path("noisy", io.noisy);
    let enh_p = cfg.path("enhanced", io.enhanced);
    let models = match (cfg.path("speech_model", io.speech_model), cfg.path("babble_model", io.babble_model)) {
        (Some(s), Some(b)) => Some((s, b)),
        (None, None) => None,
        _ => bail!("--speech-model and --babble-model go together"),
    };
    if noise_p.is_none() && noisy_p.is_none() {
        bail!("need --noise or --noisy");
    }
    if enh_p.is_none() && models.is_none() {
        bail!("need --enhanced or both models");
    }
    let mut inputs: Vec<(&str, &Path)> = vec![("clean", &clean_p)];
    for (k, p) in [("noise", &noise_p), ("noisy", &noisy_p), ("enhanced", &enh_p)] {
        if let Some(p) = p {
            inputs.push((k, p));
        }
    }
    if let Some((s, b)) = &models {
        inputs.push(("speech_model", s));
        inputs.push(("babble_model", b));
    }
    begin(&mut cfg, out, &inputs)?;

    let (clean, _) = read_audio(&clean_p)?;
    let noise = noise_p.as_deref().map(read_audio).transpose()?.map(|a| a.0);
    let noisy = match (&noisy_p, &noise) {
        (Some(p), _) => read_audio(p)?.0,
        (None, Some(n)) => {
            if n.len() != clean.len() {
                bail!("clean has {} samples, noise {}", clean.len(), n.len());
            }
            clean.iter().zip(n).map(|(a, b)| a + b).collect()
        }
        (None, None) => unreachable!(),
    };
    let model = match &models {
        Some((s, b)) => {
            let (s, b) = load_models(&cfg, s, b)?;
            Some(CompositeModel::new(&s.model, &b.model)?)
        }
        None => None,
    };
    let estimate = match (&enh_p, &model) {
        (Some(p), _) => read_audio(p)?.0,
        (None, Some(m)) => {
            let levels = start_levels(&cfg, m, &noisy)?;
            enhance_signal(&noisy, &cfg.frame, m, &cfg.enhancer, Some(levels))?.0
        }
        (None, None) => unreachable!(),
    };
    let mut meta = BTreeMap::new();
    meta.insert("clean".to_string(), clean_p.display().to_string());
    let mut noisy_meta = meta.clone();
    noisy_meta.insert("estimate".to_string(), "noisy".to_string());
    meta.insert("estimate".to_string(), "enhanced".to_string());
    let noisy_report = EvalReport::new(&clean, &noisy, &cfg.frame, noisy_meta)?;
    let report = EvalReport::new(&clean, &estimate, &cfg.frame, meta)?;
    let shadow = match (&model, &noise) {
        (Some(m), Some(n)) => {
            let levels = start_levels(&cfg, m, &noisy)?;
            Some(shadow_filter_eval(&clean, n, &cfg.frame, |spec| {
                Ok(enhance_spectrogram(spec, m, &cfg.enhancer, Some(levels))?.gains)
            })?)
        }
        _ => None,
    };
    let delta = report
        .scalars()
        .iter()
        .zip(noisy_report.scalars())
        .map(|((k, v), (_, b))| (*k, v - b))
        .collect();
    write(out.join("report.csv"), &report_csv(&report, Some(&noisy_report)))?;
    let mut table = report_table(&report, Some(&noisy_report));
    if let Some(s) = &shadow {
        table.push_str(&format!("{:<12} {:>10.3}\n{:<12} {:>10.3}\n", "speech_seg", s.speech_segsnr_db, "segnr", s.segnr_db));
    }
    write(out.join("report.txt"), &table)?;
    print!("{table}");
    write_json(out.join("report.json"), &Evaluation { enhanced: report, noisy: noisy_report, delta, shadow })
}

#[derive(Serialize)]
struct CrossSummary {
    prediction: gnhmm::CrossPrediction,
    sd_diagonal_dominant: bool,
    segsnr_diagonal_dominant: bool,
}

pub fn cross_predict_cmd(mut cfg: RunConfig, manifest_flag: Option<&Path>, speech: Option<&Path>, babble: Option<&Path>, out: &Path) -> Result<()> {
    let mpath = required(&cfg, "manifest", manifest_flag)?;
    let spath = required(&cfg, "speech_model", speech)?;
    let bpath = required(&cfg, "babble_model", babble)?;
    begin(&mut cfg, out, &[("manifest", &mpath), ("speech_model", &spath), ("babble_model", &bpath)])?;
    let (s, b) = load_models(&cfg, &spath, &bpath)?;
    let entries = manifest(&mpath)?;
    let speech_test = signals(&cfg, &entries, "speech-test", false)?;
    let babble_test = signals(&cfg, &entries, "babble-test", true)?;
    let cp = cross_predict(&speech_test, &babble_test, &s.model, &b.model, &cfg.frame)?;
    write(out.join("cross_prediction.csv"), &cross_prediction_csv(&cp))?;
    let summary = CrossSummary {
        prediction: cp,
        sd_diagonal_dominant: cp.sd.row_diagonal_dominant(false),
        segsnr_diagonal_dominant: cp.segsnr.row_diagonal_dominant(true),
    };
    println!(
        "SD diagonal dominant: {}\nSegSNR diagonal dominant: {}",
        summary.sd_diagonal_dominant, summary.segsnr_diagonal_dominant
    );
    write_json(out.join("cross_prediction.json"), &summary)
}

/// Mixes every `babble-source` entry (optional `offset_db=`) into one
/// babble signal.
pub fn synth_babble_cmd(mut cfg: RunConfig, manifest_flag: Option<&Path>, out: &Path) -> Result<()> {
    let mpath = required(&cfg, "manifest", manifest_flag)?;
    begin(&mut cfg, out, &[("manifest", &mpath)])?;
    let entries = manifest(&mpath)?;
    let chosen = with_role(&entries, "babble-source");
    if chosen.is_empty() {
        bail!("manifest has no babble-source entries");
    }
    let loaded = chosen
        .par_iter()
        .map(|(pos, e)| signal(&cfg, e, *pos, false))
        .collect::<Result<Vec<_>>>()?;
    let rate = loaded[0].1;
    if loaded.iter().any(|(_, r)| *r != rate) {
        bail!("babble sources have different sample rates");
    }
    let offsets = chosen.iter().map(|(_, e)| Ok(e.param("offset_db")?.unwrap_or(0.0))).collect::<Result<Vec<f64>>>()?;
    let sources: Vec<Vec<f64>> = loaded.into_iter().map(|s| s.0).collect();
    let spec = MixSpec { target_snr_db: 0.0, speaker_count: sources.len(), offsets_db: offsets, seed: cfg.mix.seed };
    let babble = synth_babble(&sources, &spec, &cfg.frame)?;
    write_audio(out.join("babble.wav"), &babble.signal, rate)
}

pub fn synth_speech_cmd(mut cfg: RunConfig, out: &Path) -> Result<()> {
    begin(&mut cfg, out, &[])?;
    let gen = cfg.synth.generator(&cfg.frame);
    let s = gen_synthetic_speech(&gen, cfg.synth.frames, Some(&cfg.frame), cfg.synth.sample_seed)?;
    write_audio(out.join("speech.wav"), s.waveform.as_deref().expect("waveform requested"), cfg.frame.sample_rate)
}

#[derive(Serialize)]
struct MixSummary {
    snr_db: f64,
    measured_snr_db: f64,
    noise_scale: f64,
}

pub fn mix_cmd(mut cfg: RunConfig, speech: Option<&Path>, noise: Option<&Path>, out: &Path) -> Result<()> {
    let spath = required(&cfg, "speech", speech)?;
    let npath = required(&cfg, "noise", noise)?;
    begin(&mut cfg, out, &[("speech", &spath), ("noise", &npath)])?;
    let (clean, rate) = read_audio(&spath)?;
    let (noise, _) = read_audio(&npath)?;
    let m = mix_at_snr(&clean, &noise, cfg.mix.snr_db, cfg.mix.seed, &cfg.frame)?;
    write_audio(out.join("clean.wav"), &clean, rate)?;
    write_audio(out.join("noise.wav"), &m.noise, rate)?;
    write_audio(out.join("noisy.wav"), &m.noisy, rate)?;
    let measured = if cfg.mix.snr_db.is_finite() { measured_snr_db(&clean, &m.noise, &cfg.frame)? } else { f64::INFINITY };
    write_json(
        out.join("mix.json"),
        &MixSummary { snr_db: cfg.mix.snr_db, measured_snr_db: measured, noise_scale: m.scale },
    )
}

use gnhmm::dsp::FrameConfig;
use gnhmm::model_io::{load_babble, load_speech};
use gnhmm::wav::{read_wav, write_wav, SampleFormat};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const SMALL: [&str; 12] = [
    "--set", "frame.frame_len=64",
    "--set", "frame.hop=32",
    "--set", "speech_train.n_states=3",
    "--set", "speech_train.n_iters=6",
    "--set", "babble_train.n_states=2",
    "--set", "babble_train.n_iters=4",
];

const MANIFEST: &str = "\
speech-train synth seed=1 frames=150
speech-train synth seed=2 frames=150
babble-train synth seed=3 frames=150 speakers=4
speech-test synth seed=4 frames=100
babble-test synth seed=5 frames=100 speakers=4
";

fn gnhmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnhmm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = gnhmm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&SMALL);
    v
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn manifest(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }
    fn speech(&self) -> PathBuf {
        self.root.join("sp/speech_model.json")
    }
    fn babble(&self) -> PathBuf {
        self.root.join("bb/babble_model.json")
    }
    fn noisy(&self) -> PathBuf {
        self.root.join("mix/noisy.wav")
    }
}

/// Models and a 5 dB mixture shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("manifest.txt"), MANIFEST).unwrap();
        fs::write(root.join("sources.txt"), "babble-source synth seed=7 frames=120\nbabble-source synth seed=8 frames=120\n").unwrap();
        let f = Fixture { _dir: dir, root };
        let r = &f.root;
        ok(&with_small(&["train-speech", "--manifest", s(&f.manifest()), "--out", s(&r.join("sp"))]));
        ok(&with_small(&["train-babble", "--manifest", s(&f.manifest()), "--speech-model", s(&f.speech()), "--out", s(&r.join("bb"))]));
        ok(&with_small(&["synth-speech", "--set", "synth.frames=120", "--set", "synth.sample_seed=9", "--out", s(&r.join("ss"))]));
        ok(&with_small(&["synth-babble", "--manifest", s(&r.join("sources.txt")), "--out", s(&r.join("sb"))]));
        ok(&with_small(&[
            "mix", "--speech", s(&r.join("ss/speech.wav")), "--noise", s(&r.join("sb/babble.wav")),
            "--set", "mix.snr_db=5", "--out", s(&r.join("mix")),
        ]));
        f
    })
}

fn small_frame() -> FrameConfig {
    FrameConfig { frame_len: 64, hop: 32, ..Default::default() }
}

#[test]
fn trained_models_load_and_log_is_monotone() {
    let f = fixture();
    let speech = load_speech(f.speech()).unwrap();
    speech.model.validate().unwrap();
    assert_eq!(speech.model.n_states(), 3);
    assert_eq!(speech.model.n_bins(), 33);
    let babble = load_babble(f.babble(), &speech).unwrap();
    babble.model.validate(speech.model.basis.view()).unwrap();
    assert_eq!(babble.speech_model_sha256, speech.sha256);
    assert_eq!(babble.provenance.cccp_iterations.len(), 4);

    let log = fs::read_to_string(f.root.join("sp/train_log.csv")).unwrap();
    let ll: Vec<f64> = log.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ll.len(), 7);
    for w in ll.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{ll:?}");
    }
    assert!(fs::read_to_string(f.root.join("bb/train_log.csv")).unwrap().starts_with("iteration,loglik,cccp_iterations"));
    for d in ["sp", "bb", "ss", "sb", "mix"] {
        assert!(f.root.join(d).join("config.toml").exists(), "{d}");
    }
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let f = fixture();
    let a = f.root.join("det_a");
    let b = f.root.join("det_b");
    ok(&with_small(&["--threads", "1", "train-speech", "--manifest", s(&f.manifest()), "--out", s(&a)]));
    ok(&with_small(&["--threads", "4", "train-speech", "--manifest", s(&f.manifest()), "--out", s(&b)]));
    for file in ["speech_model.json", "train_log.csv", "config.toml"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert_eq!(fs::read(a.join("speech_model.json")).unwrap(), fs::read(f.speech()).unwrap());
    let c = f.root.join("det_c");
    ok(&with_small(&["--threads", "1", "train-babble", "--manifest", s(&f.manifest()), "--speech-model", s(&f.speech()), "--out", s(&c)]));
    assert_eq!(fs::read(c.join("babble_model.json")).unwrap(), fs::read(f.babble()).unwrap());
}

#[test]
fn enhance_reruns_from_snapshot() {
    let f = fixture();
    let a = f.root.join("enh_a");
    ok(&with_small(&["enhance", "--input", s(&f.noisy()), "--speech-model", s(&f.speech()), "--babble-model", s(&f.babble()), "--out", s(&a)]));
    let b = f.root.join("enh_b");
    ok(&["--threads", "1", "enhance", "--config", s(&a.join("config.toml")), "--out", s(&b)]);
    for file in ["enhanced.wav", "diagnostics.jsonl", "config.toml"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let diag = fs::read_to_string(a.join("diagnostics.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(diag.lines().next().unwrap()).unwrap();
    for key in ["version", "frame", "speech_level", "babble_level", "speech_state", "babble_state", "mean_gain"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let (noisy, _) = read_wav(f.noisy()).unwrap();
    let (out, _) = read_wav(a.join("enhanced.wav")).unwrap();
    assert_eq!(noisy.len(), out.len());
}

#[test]
fn enhance_zero_and_truncated_inputs() {
    let f = fixture();
    let zero = f.root.join("zero.wav");
    write_wav(&zero, &vec![0.0; 2000], 16_000, SampleFormat::Float32).unwrap();
    let z = f.root.join("enh_zero");
    ok(&with_small(&["enhance", "--input", s(&zero), "--speech-model", s(&f.speech()), "--babble-model", s(&f.babble()), "--out", s(&z)]));
    let (out, _) = read_wav(z.join("enhanced.wav")).unwrap();
    assert_eq!(out.len(), 2000);
    assert!(out.iter().all(|v| *v == 0.0));

    let (noisy, _) = read_wav(f.noisy()).unwrap();
    let frame = small_frame();
    let t = 40;
    let cut = f.root.join("cut.wav");
    write_wav(&cut, &noisy[..frame.signal_len(t)], 16_000, SampleFormat::Float32).unwrap();
    let full = f.root.join("enh_full");
    let part = f.root.join("enh_part");
    ok(&with_small(&["enhance", "--input", s(&f.noisy()), "--speech-model", s(&f.speech()), "--babble-model", s(&f.babble()), "--out", s(&full)]));
    ok(&with_small(&["enhance", "--input", s(&cut), "--speech-model", s(&f.speech()), "--babble-model", s(&f.babble()), "--out", s(&part)]));
    let (a, _) = read_wav(full.join("enhanced.wav")).unwrap();
    let (b, _) = read_wav(part.join("enhanced.wav")).unwrap();
    // the last half frame of the cut output misses its overlap partner
    let settled = t * frame.hop;
    assert_eq!(&a[..settled], &b[..settled]);
    let da = fs::read_to_string(full.join("diagnostics.jsonl")).unwrap();
    let db = fs::read_to_string(part.join("diagnostics.jsonl")).unwrap();
    assert_eq!(da.lines().take(t).collect::<Vec<_>>(), db.lines().collect::<Vec<_>>());
}

#[test]
fn evaluate_reports_absolute_and_delta() {
    let f = fixture();
    let clean = f.root.join("mix/clean.wav");
    let noise = f.root.join("mix/noise.wav");
    let e = f.root.join("eval_models");
    ok(&with_small(&[
        "evaluate", "--clean", s(&clean), "--noise", s(&noise), "--speech-model", s(&f.speech()), "--babble-model", s(&f.babble()),
        "--out", s(&e),
    ]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.join("report.json")).unwrap()).unwrap();
    for key in ["sdr_db", "snr_db", "segsnr_db", "sd_db"] {
        let v = report["enhanced"][key].as_f64().unwrap();
        let b = report["noisy"][key].as_f64().unwrap();
        assert!((report["delta"][key].as_f64().unwrap() - (v - b)).abs() < 1e-12, "{key}");
    }
    assert!(report["shadow"]["speech_segsnr_db"].is_number());
    assert!(report["shadow"]["segnr_db"].is_number());
    let csv = fs::read_to_string(e.join("report.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "metric,value,delta"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);

    // the clean signal as its own estimate hits the ceiling
    let id = f.root.join("eval_identity");
    ok(&with_small(&["evaluate", "--clean", s(&clean), "--noise", s(&noise), "--enhanced", s(&clean), "--out", s(&id)]));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(id.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["enhanced"]["sdr_db"].as_f64().unwrap(), 100.0);

    // the noisy signal as estimate changes nothing
    let nz = f.root.join("eval_noisy");
    ok(&with_small(&["evaluate", "--clean", s(&clean), "--noisy", s(&f.noisy()), "--enhanced", s(&f.noisy()), "--out", s(&nz)]));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(nz.join("report.json")).unwrap()).unwrap();
    for key in ["sdr_db", "snr_db", "segsnr_db", "sd_db"] {
        assert_eq!(r["delta"][key].as_f64().unwrap(), 0.0, "{key}");
    }
}

#[test]
fn cross_predict_grid() {
    let f = fixture();
    let a = f.root.join("cp_a");
    let b = f.root.join("cp_b");
    ok(&with_small(&["cross-predict", "--manifest", s(&f.manifest()), "--speech-model", s(&f.speech()), "--babble-model", s(&f.babble()), "--out", s(&a)]));
    ok(&with_small(&["--threads", "1", "cross-predict", "--manifest", s(&f.manifest()), "--speech-model", s(&f.speech()), "--babble-model", s(&f.babble()), "--out", s(&b)]));
    let csv = fs::read_to_string(a.join("cross_prediction.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("cross_prediction.csv")).unwrap());
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "metric,signal,speech_model,babble_model");
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        assert_eq!(r.split(',').count(), 4);
    }
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("cross_prediction.json")).unwrap()).unwrap();
    assert!(j["sd_diagonal_dominant"].is_boolean());
}

#[test]
fn synthesis_is_deterministic() {
    let f = fixture();
    let again = f.root.join("sb_again");
    ok(&with_small(&["--threads", "1", "synth-babble", "--manifest", s(&f.root.join("sources.txt")), "--out", s(&again)]));
    assert_eq!(fs::read(again.join("babble.wav")).unwrap(), fs::read(f.root.join("sb/babble.wav")).unwrap());
    let mix: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("mix/mix.json")).unwrap()).unwrap();
    assert!((mix["measured_snr_db"].as_f64().unwrap() - 5.0).abs() < 0.01);
}

#[test]
fn exit_codes() {
    let f = fixture();
    let out = f.root.join("bad");
    let missing = gnhmm(&["enhance", "--input", "/nonexistent.wav", "--speech-model", s(&f.speech()), "--babble-model", s(&f.babble()), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    let unknown = gnhmm(&["show-config", "--set", "enhancer.no_such_field=1"]);
    assert_eq!(unknown.status.code(), Some(2));
    // a speech model with a different state count does not fit the babble file
    let other = f.root.join("sp4");
    let manifest = f.manifest();
    let mut args = with_small(&["train-speech", "--manifest", s(&manifest), "--out", s(&other)]);
    // later overrides win
    args.extend(["--set", "speech_train.n_states=4"]);
    ok(&args);
    let mismatch = gnhmm(&with_small(&[
        "enhance", "--input", s(&f.noisy()), "--speech-model", s(&other.join("speech_model.json")), "--babble-model", s(&f.babble()),
        "--out", s(&out),
    ]));
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&mismatch.stderr).is_empty());
    let ok_run = gnhmm(&["show-config"]);
    assert_eq!(ok_run.status.code(), Some(0));
    let text = String::from_utf8(ok_run.stdout).unwrap();
    assert!(text.contains("n_states = 55"));
}

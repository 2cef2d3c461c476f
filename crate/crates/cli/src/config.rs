//! The resolved run configuration: TOML file, then `--set` overrides.

use anyhow::{bail, Context, Result};
use gnhmm::corpus::SpeechGenConfig;
use gnhmm::{BabbleTrainConfig, EnhancerConfig, FrameConfig, SpeechTrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Name of the snapshot written next to every output.
pub const SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub frame: FrameConfig,
    pub speech_train: SpeechTrainConfig,
    pub babble_train: BabbleTrainConfig,
    pub enhancer: EnhancerConfig,
    pub levels: Levels,
    pub synth: SynthConfig,
    pub mix: MixConfig,
    /// Input paths of the command that wrote the snapshot; flags win.
    pub paths: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            frame: FrameConfig::default(),
            speech_train: SpeechTrainConfig::default(),
            babble_train: BabbleTrainConfig::default(),
            enhancer: EnhancerConfig::default(),
            levels: Levels::default(),
            synth: SynthConfig::default(),
            mix: MixConfig::default(),
            paths: BTreeMap::new(),
        }
    }
}

/// Starting levels for the online enhancer; guessed from the leading
/// frames when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Levels {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speech: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub babble: Option<f64>,
}

/// Defaults for `synth` manifest entries. The bin count follows the frame
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_states: usize,
    pub shape: f64,
    pub gain_shape: f64,
    pub level: f64,
    pub self_prob: f64,
    pub spread_db: f64,
    pub mean_power: f64,
    pub model_seed: u64,
    /// Sampling seed for `synth-speech`; manifest entries without a `seed`
    /// use this plus their line position.
    pub sample_seed: u64,
    pub frames: usize,
    pub speakers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let g = SpeechGenConfig::default();
        SynthConfig {
            n_states: g.n_states,
            shape: g.shape,
            gain_shape: g.gain_shape,
            level: g.level,
            self_prob: g.self_prob,
            spread_db: g.spread_db,
            mean_power: g.mean_power,
            model_seed: g.model_seed,
            sample_seed: 0,
            frames: 500,
            speakers: 6,
        }
    }
}

impl SynthConfig {
    pub fn generator(&self, frame: &FrameConfig) -> SpeechGenConfig {
        SpeechGenConfig {
            n_states: self.n_states,
            n_bins: frame.n_bins(),
            shape: self.shape,
            gain_shape: self.gain_shape,
            level: self.level,
            self_prob: self.self_prob,
            spread_db: self.spread_db,
            mean_power: self.mean_power,
            model_seed: self.model_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig { snr_db: 0.0, seed: 0 }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = root;
    for p in path {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {key}: {p} is not a section"),
        };
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Defaults, overlaid by `file` and then by each `section.field=value`.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(root).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        self.enhancer.validate()?;
        if self.synth.frames == 0 || self.synth.speakers == 0 {
            bail!("synth.frames and synth.speakers must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// A flag value, or the path recorded under `key` in a snapshot.
    pub fn path(&self, key: &str, flag: Option<&Path>) -> Option<std::path::PathBuf> {
        flag.map(Path::to_path_buf).or_else(|| self.paths.get(key).map(Into::into))
    }
}

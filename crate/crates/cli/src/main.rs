//! `gnhmm`: train the speech and babble models, enhance noisy recordings and
//! score the results.

mod commands;
mod config;

use anyhow::Result;
use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "gnhmm", version, about = "Gamma-HMM speech and babble models for single-channel speech enhancement")]
struct Cli {
    /// Worker threads; 1 runs serially. Defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML run configuration, e.g. the config.toml snapshot of an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set speech_train.n_states=10`.
    #[arg(long = "set", global = true, value_name = "SECTION.FIELD=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the speech model on the manifest's speech-train entries.
    TrainSpeech {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the babble model on the manifest's babble-train entries.
    TrainBabble {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        speech_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance a noisy WAV file.
    Enhance {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        speech_model: Option<PathBuf>,
        #[arg(long)]
        babble_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score enhanced and noisy signals against the clean reference.
    Evaluate {
        #[arg(long)]
        clean: Option<PathBuf>,
        /// The noise alone; enables the shadow-filtering measures.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Defaults to clean + noise.
        #[arg(long)]
        noisy: Option<PathBuf>,
        /// A finished estimate; otherwise the models enhance the noisy input.
        #[arg(long)]
        enhanced: Option<PathBuf>,
        #[arg(long)]
        speech_model: Option<PathBuf>,
        #[arg(long)]
        babble_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score speech-test and babble-test entries under both models.
    CrossPredict {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        speech_model: Option<PathBuf>,
        #[arg(long)]
        babble_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix the manifest's babble-source entries into babble.wav.
    SynthBabble {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one synthetic speech recording from the [synth] settings.
    SynthSpeech {
        #[arg(long)]
        out: PathBuf,
    },
    /// Add noise to speech at mix.snr_db.
    Mix {
        #[arg(long)]
        speech: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration.
    ShowConfig,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::TrainSpeech { manifest, out } => commands::train_speech(cfg, manifest.as_deref(), &out),
        Command::TrainBabble { manifest, speech_model, out } => {
            commands::train_babble_cmd(cfg, manifest.as_deref(), speech_model.as_deref(), &out)
        }
        Command::Enhance { input, speech_model, babble_model, out } => {
            commands::enhance(cfg, input.as_deref(), speech_model.as_deref(), babble_model.as_deref(), &out)
        }
        Command::Evaluate { clean, noise, noisy, enhanced, speech_model, babble_model, out } => {
            let io = commands::EvalInputs {
                clean: clean.as_deref(),
                noise: noise.as_deref(),
                noisy: noisy.as_deref(),
                enhanced: enhanced.as_deref(),
                speech_model: speech_model.as_deref(),
                babble_model: babble_model.as_deref(),
            };
            commands::evaluate(cfg, io, &out)
        }
        Command::CrossPredict { manifest, speech_model, babble_model, out } => {
            commands::cross_predict_cmd(cfg, manifest.as_deref(), speech_model.as_deref(), babble_model.as_deref(), &out)
        }
        Command::SynthBabble { manifest, out } => commands::synth_babble_cmd(cfg, manifest.as_deref(), &out),
        Command::SynthSpeech { out } => commands::synth_speech_cmd(cfg, &out),
        Command::Mix { speech, noise, out } => commands::mix_cmd(cfg, speech.as_deref(), noise.as_deref(), &out),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

/// Numerical failures from the library get their own code; everything else
/// is treated as bad input.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<gnhmm::Error>()) {
        Some(e) if !e.is_input_error() => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

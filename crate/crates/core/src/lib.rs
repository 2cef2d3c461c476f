//! Gamma-HMM speech and gamma nonnegative-HMM babble models for
//! single-channel speech enhancement.
//!
//! Speech power spectra are modelled by an ergodic HMM with gamma emissions
//! and a stochastic gain ([`speech`]). Babble reuses the speech basis with
//! non-negative state weight vectors ([`babble`]). [`enhancer`] combines the
//! two into an online MMSE estimator.

pub mod babble;
pub mod bessel;
pub mod corpus;
pub mod dsp;
mod emission;
pub mod enhancer;
pub mod error;
pub mod gig;
pub mod kmeans;
pub mod markov;
pub mod metrics;
pub mod model_io;
pub mod projected_newton;
pub mod special;
pub mod speech;
pub mod wav;

pub use babble::{BabbleNhmm, BabbleTrainConfig, TrainedBabble};
pub use dsp::{FrameConfig, Spectrogram, WindowKind};
pub use enhancer::{CompositeModel, EnhancerConfig, EnhancerState, FrameDiagnostics};
pub use error::{Error, Result};
pub use gig::{GigMoments, GigParams};
pub use markov::Posteriors;
pub use metrics::{ConfusionMatrix, CrossPrediction, EvalReport, ShadowReport};
pub use model_io::Provenance;
pub use speech::{SpeechHmm, SpeechTrainConfig, TrainedSpeech};

//! Phonocardiogram screening pipeline.
//!
//! Raw heart-sound recordings are decimated to 800 Hz, z-scored and framed
//! to a fixed length, then classified by a 1D inception-style convolutional
//! network. The network is pretrained on a murmur task and fine-tuned on the
//! target diagnosis with a replaced softmax head; per-site probabilities are
//! averaged into one decision per patient.
//!
//! Modules, bottom-up:
//!
//! - [`signal_io`]: WAV, PhysioNet 2022 headers, manifest CSV, patient splits
//! - [`dsp`]: anti-aliased decimation, z-score, length standardization
//! - [`autodiff`]: the tape-based differentiation engine
//! - [`model`]: network construction, inference, head replacement, weight files
//! - [`train`]: class weights, Adam, step schedule, early stopping, `fit`
//! - [`evaluate`]: confusion metrics, ROC/PR, AUROC, patient aggregation, protocols
//! - [`synth`]: a seeded synthetic heart-sound generator

pub mod autodiff;
pub mod dataset;
pub mod dsp;
mod error;
pub mod evaluate;
pub mod model;
pub mod signal_io;
pub mod synth;
pub mod train;

pub use dataset::{PreparedRecording, PreparedSet};
pub use error::{Error, Result};

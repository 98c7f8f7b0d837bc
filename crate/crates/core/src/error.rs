use std::path::PathBuf;

use thiserror::Error;

use crate::signal_io::Site;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    // signal_io
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("truncated WAV file")]
    TruncatedFile,
    #[error("malformed patient header: {0}")]
    MalformedHeader(String),
    #[error("patient {0} has an unknown murmur label")]
    UnknownLabel(String),
    #[error("missing audio file {}", .0.display())]
    MissingAudio(PathBuf),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("insufficient patients: {0}")]
    InsufficientPatients(String),

    // dsp
    #[error("invalid cutoff {cutoff_hz} Hz for sample rate {fs_hz} Hz")]
    InvalidCutoff { cutoff_hz: f64, fs_hz: f64 },
    #[error("cannot decimate {from_hz} Hz to {to_hz} Hz by an integer factor")]
    NonIntegerFactor { from_hz: u32, to_hz: u32 },
    #[error("signal is empty")]
    EmptySignal,

    // autodiff / model
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("probabilities do not form a distribution: {0}")]
    NonDistribution(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("architecture fingerprint mismatch: expected {expected:016x}, found {found:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("corrupt weight file: {0}")]
    CorruptFile(String),

    // train / evaluate
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("cannot aggregate an empty group")]
    EmptyGroup,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("metric needs both positive and negative samples")]
    SingleClass,
    #[error("no recordings for site {0}")]
    EmptySite(Site),

    // synth
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
}

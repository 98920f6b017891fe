use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("invalid analysis config: {0}")]
    InvalidConfig(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedSampleRate(u32),
    #[error("invalid room: {0}")]
    InvalidRoom(&'static str),
    #[error("unachievable T60 {t60} s: absorption {alpha:.4} >= 1")]
    UnachievableT60 { t60: f64, alpha: f64 },
    #[error("decay range not reached: {0}")]
    NoDecaySpan(&'static str),
    #[error("normalizer not fitted")]
    UnfittedNormalizer,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("signal too short: {0}")]
    TooShort(&'static str),
    #[error("zero clean-signal energy")]
    ZeroEnergy,
    #[error("empty overlap after alignment")]
    EmptyOverlap,
    #[error("corrupted checkpoint: {0}")]
    CorruptedCheckpoint(&'static str),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

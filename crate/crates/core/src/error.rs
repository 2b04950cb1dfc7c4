use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller supplied an argument that violates an operation's preconditions.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("frame {frame} is outside segment [{start}, {end}]")]
    OutOfSegment { frame: f64, start: u32, end: u32 },
    #[error("invalid segment: key frames {0} and {1} are not increasing")]
    InvalidSegment(u32, u32),
    #[error("audio must be mono (found {0} channels)")]
    MonoRequired(u16),
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("sample rate {found} Hz does not match the expected {expected} Hz")]
    SampleRate { expected: u32, found: u32 },
    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersion { expected: u32, found: u32 },
    #[error("dataset fingerprints differ: {0}")]
    FingerprintMismatch(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a fault in the tool.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Internal(_) | Error::Io { .. } | Error::Diverged(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

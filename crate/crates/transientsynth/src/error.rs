use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] transientsynth_core::Error),

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checkpoint has {found} trailing bytes")]
    TrailingBytes { found: usize },

    #[error("checkpoint config: {0}")]
    CheckpointConfig(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Wav { path: PathBuf, source: hound::Error },

    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("dataset does not match its grid: {0}")]
    DatasetMismatch(String),

    #[error("training diverged in epoch {epoch}: {source}")]
    Divergence { epoch: usize, source: transientsynth_core::Error },

    #[error("png {}: {source}", path.display())]
    Png { path: PathBuf, source: png::EncodingError },

    #[error("websocket: {0}")]
    WebSocket(#[from] tungstenite::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a path to an I/O error.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}

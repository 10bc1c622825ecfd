use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(String),
    #[error("degenerate crop: {0}")]
    DegenerateCrop(String),
    #[error("no contributions to fuse")]
    NoData,
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stream error: {0}")]
    Stream(String),
    #[error("missing frame {index} in stream {}", dir.display())]
    FrameGap { dir: PathBuf, index: u64 },
    #[error("classifier error: {0}")]
    Classifier(String),
    #[error("classifier timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("class {class:?} has {count} entries, at least 5 required")]
    ClassTooSmall { class: String, count: usize },
    #[error("missing predictions for {0:?}")]
    MissingPredictions(Vec<String>),
    #[error("expected exactly 3 split scores, got {0}")]
    SplitCount(usize),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: {source}")]
    Image {
        context: String,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 stream, 4 classifier.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stream(_) | Error::FrameGap { .. } | Error::Image { .. } => 3,
            Error::Classifier(_) | Error::Timeout(_) | Error::Protocol(_) => 4,
            _ => 2,
        }
    }
}

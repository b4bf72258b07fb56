use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: header implies {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite voxel value at index {0}")]
    NonFinite(usize),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("score {score} out of range [{min}, {max}] for {what}")]
    ScoreRange {
        what: String,
        score: i64,
        min: u8,
        max: u8,
    },

    #[error("duplicate record for slice {slice_id} and reader {reader_id}")]
    Duplicate { slice_id: String, reader_id: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("slice {0} still carries an ambiguous score 6; resolve it with resolve_ambiguous first")]
    Unresolved(String),

    #[error("missing adjudication for score-6 slice {0}")]
    MissingAdjudication(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

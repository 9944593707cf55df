use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("voltage {value} V on row {row} is outside [0, {v_max}] V")]
    VoltageOutOfRange { row: usize, value: f64, v_max: f64 },

    #[error("ADC input current must be non-negative, got {0} A")]
    NegativeCurrent(f64),

    #[error("column {col} out of range for a crossbar with {cols} columns")]
    ColumnOutOfRange { col: usize, cols: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("negative activation {value} entering the crossbar of layer {layer}")]
    NegativeActivation { layer: usize, value: f32 },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: expected {expected} bytes, found {actual}")]
    Length {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: checksum mismatch (manifest {expected}, file {actual})")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

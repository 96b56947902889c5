use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("mask has zero area")]
    EmptyMask,

    #[error("zero-norm feature vector")]
    ZeroVector,

    #[error("no class prototypes available")]
    EmptyPrototypes,

    #[error("no prototype for class {0}")]
    MissingPrototype(u32),

    #[error("classes without support annotations: {0:?}")]
    MissingSupport(Vec<u32>),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("method `{0}` requires a mask for every proposal")]
    MissingMasks(String),

    #[error("{}: {msg}", describe_location(.file, *.record))]
    Load {
        file: PathBuf,
        record: Option<usize>,
        msg: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

fn describe_location(file: &std::path::Path, record: Option<usize>) -> String {
    match record {
        Some(i) => format!("{} (record {i})", file.display()),
        None => file.display().to_string(),
    }
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(file: impl Into<PathBuf>, record: Option<usize>, msg: impl ToString) -> Self {
        Error::Load {
            file: file.into(),
            record,
            msg: msg.to_string(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by input data (files, formats, record contents).
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Format(_) | Error::Load { .. } | Error::Io { .. } => true,
            Error::Stage { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}

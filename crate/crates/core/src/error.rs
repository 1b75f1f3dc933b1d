use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate image_id `{image_id}` on lines {first_line} and {second_line}")]
    DuplicateImage {
        image_id: String,
        first_line: u64,
        second_line: u64,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("image `{}` is {width}x{height}: {reason}", path.display())]
    Dimension {
        path: PathBuf,
        width: u32,
        height: u32,
        reason: String,
    },

    #[error("landmarks `{}`: {reason}", path.display())]
    Landmark { path: PathBuf, reason: String },

    #[error("unknown subject `{0}`")]
    UnknownSubject(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("region labeling failed: {0}")]
    Labeling(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("insufficient donors: {0}")]
    InsufficientDonors(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("I/O error on `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on `{}`: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    ///
    /// Input and configuration problems map to 2, pool/group capacity problems
    /// to 3, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::DuplicateImage { .. }
            | Error::Validation(_)
            | Error::Dimension { .. }
            | Error::Landmark { .. }
            | Error::UnknownSubject(_)
            | Error::MissingData(_)
            | Error::Shape(_)
            | Error::Config(_)
            | Error::Input(_) => 2,
            Error::Capacity(_) | Error::InsufficientDonors(_) => 3,
            _ => 1,
        }
    }
}

use thiserror::Error;

/// Errors shared across the architecture, engine, synthesis, and data layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid class count: {0}")]
    InvalidClassCount(String),

    #[error("shape underflow: {0}")]
    ShapeUnderflow(String),

    #[error("degenerate architecture: {0}")]
    DegenerateArchitecture(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layer {0} has no live synapses")]
    AllDeadLayer(String),

    #[error("environmental factor {0} outside (0, 1]")]
    InvalidEnvironmentFactor(f64),

    #[error("non-finite value: {0}")]
    NumericOverflow(String),

    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: u32, num_classes: u32 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("split {0:?} is empty")]
    EmptySplit(String),

    #[error("file {path} is truncated: {detail}")]
    TruncatedFile { path: String, detail: String },

    #[error("record {index} in {path} has label byte {label} (valid: 0..=9)")]
    InvalidLabelByte { path: String, index: usize, label: u8 },

    #[error("class subset is empty")]
    EmptySubset,

    #[error("missing folder for class {0}")]
    MissingClassFolder(String),

    #[error("cannot decode image {path}: {detail}")]
    UndecodableImage { path: String, detail: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: String, detail: String },

    #[error("run directory is locked by another process: {0}")]
    RunLocked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 config/input error, 3 evolution degeneracy, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateArchitecture(_) => 3,
            Error::NumericOverflow(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A container file is missing or unparseable.
    #[error("format error: {0}")]
    Format(String),

    /// Container pieces disagree with each other (sizes, bounds).
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unknown event label {label:?} (events.tsv line {line})")]
    Label { label: String, line: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("epoch window exceeds recording bounds for events {offending:?}")]
    Bounds { offending: Vec<usize> },

    #[error("class {0:?} has no trials")]
    EmptyClass(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("cannot split: {0}")]
    Split(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "FormatError",
            Error::Integrity(_) => "IntegrityError",
            Error::Label { .. } => "LabelError",
            Error::Io(_) => "IOError",
            Error::Json(_) => "FormatError",
            Error::Precondition(_) => "PreconditionError",
            Error::Spec(_) => "SpecError",
            Error::Bounds { .. } => "BoundsError",
            Error::EmptyClass(_) => "EmptyClassError",
            Error::Config(_) => "ConfigError",
            Error::Shape { .. } => "ShapeError",
            Error::Split(_) => "SplitError",
        }
    }
}

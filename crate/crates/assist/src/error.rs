use thiserror::Error;

pub type Result<T, E = AssistError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AssistError {
    /// The provider could not produce a reply after all retries.
    #[error("provider error: {0}")]
    Provider(String),

    #[error("action {action_id} is {state}, not pending")]
    State { action_id: String, state: String },

    #[error("no parseable ideas: {message}")]
    Generation { message: String, raw: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid document: {0}")]
    Document(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl AssistError {
    pub fn kind(&self) -> &'static str {
        match self {
            AssistError::Provider(_) => "ProviderError",
            AssistError::State { .. } => "StateError",
            AssistError::Generation { .. } => "GenerationError",
            AssistError::NotFound(_) => "NotFoundError",
            AssistError::Config(_) => "ConfigError",
            AssistError::Document(_) => "DocumentError",
            AssistError::Precondition(_) => "PreconditionError",
            AssistError::Io(_) => "IOError",
            AssistError::Json(_) => "FormatError",
        }
    }
}

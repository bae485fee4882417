use std::collections::BTreeMap;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use chatbci_assist::AssistError;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct ServiceError {
    #[serde(skip)]
    pub status: u16,
    #[serde(rename = "error")]
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
}

impl ServiceError {
    pub fn new(status: u16, kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self { status, kind: kind.into(), message: message.into(), fields: BTreeMap::new() }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(404, "NotFoundError", what)
    }

    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        let (field, message) = (field.into(), message.into());
        let mut e = Self::new(400, "ValidationError", format!("{field}: {message}"));
        e.fields.insert(field, message);
        e
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "InternalError", message)
    }

    /// Single-line JSON, as printed by the CLI.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind))
    }
}

impl From<chatbci_core::Error> for ServiceError {
    fn from(e: chatbci_core::Error) -> Self {
        use chatbci_core::Error as E;
        let status = match &e {
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 404,
            E::Io(_) => 500,
            E::Format(_) | E::Integrity(_) | E::Label { .. } | E::Json(_) => 422,
            _ => 400,
        };
        let kind = match &e {
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => "NotFoundError",
            _ => e.kind(),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<AssistError> for ServiceError {
    fn from(e: AssistError) -> Self {
        let status = match &e {
            AssistError::State { .. } => 409,
            AssistError::NotFound(_) => 404,
            AssistError::Provider(_) | AssistError::Generation { .. } => 502,
            AssistError::Config(_) | AssistError::Precondition(_) | AssistError::Document(_) => 400,
            AssistError::Io(_) | AssistError::Json(_) => 500,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Self::not_found(e.to_string())
        } else {
            Self::new(500, "IOError", e.to_string())
        }
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(422, "FormatError", e.to_string())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Deserialize with the failing field's path in the error.
pub fn from_value_at<T: serde::de::DeserializeOwned>(prefix: &str, value: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = match (prefix.is_empty(), path.as_str()) {
            (true, ".") => "body".to_string(),
            (true, p) => p.to_string(),
            (false, ".") => prefix.to_string(),
            (false, p) => format!("{prefix}.{p}"),
        };
        ServiceError::field(field, e.inner().to_string())
    })
}

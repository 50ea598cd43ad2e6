// SPDX-License-Identifier: Apache-2.0

//! The service boundary: configuration, the long-running service with its
//! HTTP API, and the one-shot evaluation mode.

pub mod catalog;
pub mod config;
pub mod evaluate;
pub mod http;
pub mod runner;
pub mod service;

pub use catalog::Registration;
pub use config::ServiceConfig;
pub use service::{Service, StartupError};

use serde::Serialize;

use crate::ingest::IngestError;
use crate::ledger::query::QueryError;
use crate::ledger::LedgerError;
use crate::registry::RegistryError;
use crate::report::PolicyError;
use catalog::CatalogError;

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

/// An error code with its message. The HTTP status follows from the code.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("BAD_REQUEST", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new("NOT_FOUND", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new("INTERNAL", message)
    }

    pub fn status(&self) -> u16 {
        status_for(self.code)
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: self.code.to_string(), message: self.message.clone() }
    }
}

pub fn status_for(code: &str) -> u16 {
    match code {
        "BAD_EVENT" | "BAD_REQUEST" => 400,
        "NOT_REGISTERED" | "NOT_FOUND" | "NO_RUN" | "NO_DATA" => 404,
        "DUPLICATE" | "DUPLICATE_NAME" | "POLICY_REGRESSION" => 409,
        "UNAUTHORIZED" => 401,
        "TOO_LARGE" => 413,
        "NO_BASELINE" | "BAD_DOI" | "SOURCE_UNAVAILABLE" | "MISSING_ARTIFACT" | "REJECTED" => 422,
        "SHUTTING_DOWN" => 503,
        _ => 500,
    }
}

macro_rules! from_coded {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                ApiError::new(e.code(), e.to_string())
            }
        }
    )*};
}

from_coded!(IngestError, RegistryError, LedgerError, QueryError, CatalogError, PolicyError);

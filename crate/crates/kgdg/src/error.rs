//! Error types for the pipeline crates.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Domain;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus: {path}")]
    Empty { path: PathBuf },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("duplicate citation {citation:?} on line {line}")]
    DuplicateCitation { citation: String, line: usize },
    #[error("empty partition: {domain}")]
    EmptyPartition { domain: Domain },
}

#[derive(Debug, Error, Clone)]
pub enum BackendError {
    #[error("auth: environment variable {var} is not set")]
    Auth { var: String },
    #[error("auth rejected with status {status}")]
    Denied { status: u16 },
    #[error("transport: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("timeout after {0} ms")]
    Timeout(u64),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response is missing choices[0].message.content")]
    MissingContent,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        #[source]
        last: Box<BackendError>,
    },
}

impl BackendError {
    /// Transient failures are retried by the HTTP backend.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::RateLimited | BackendError::Timeout(_) | BackendError::Transport(_) => {
                true
            }
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }

    pub fn is_auth(&self) -> bool {
        matches!(self, BackendError::Auth { .. } | BackendError::Denied { .. })
            || matches!(self, BackendError::Exhausted { last, .. } if last.is_auth())
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no JSON object found in reply")]
    NoJson,
    #[error("invalid JSON: {0}")]
    Parse(String),
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("ill-typed field: {field} (expected {expected})")]
    IllTyped {
        field: &'static str,
        expected: &'static str,
    },
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unbound placeholder {{{0}}}")]
    UnboundPlaceholder(String),
    #[error("unreplaced placeholder {{{0}}} after rendering")]
    UnreplacedPlaceholder(String),
    #[error("failed to read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Why a sampled draw never became a verified record. These names appear in
/// `rejected.jsonl` and in the run statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionCategory {
    ParseFailure,
    SchemaFailure,
    FormatFailure,
    BackendFailure,
    Unfixable,
    ArithmeticMismatch,
    VerifyFailed,
    Duplicate,
}

impl RejectionCategory {
    pub const ALL: [RejectionCategory; 8] = [
        RejectionCategory::ParseFailure,
        RejectionCategory::SchemaFailure,
        RejectionCategory::FormatFailure,
        RejectionCategory::BackendFailure,
        RejectionCategory::Unfixable,
        RejectionCategory::ArithmeticMismatch,
        RejectionCategory::VerifyFailed,
        RejectionCategory::Duplicate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionCategory::ParseFailure => "parse_failure",
            RejectionCategory::SchemaFailure => "schema_failure",
            RejectionCategory::FormatFailure => "format_failure",
            RejectionCategory::BackendFailure => "backend_failure",
            RejectionCategory::Unfixable => "unfixable",
            RejectionCategory::ArithmeticMismatch => "arithmetic_mismatch",
            RejectionCategory::VerifyFailed => "verify_failed",
            RejectionCategory::Duplicate => "duplicate",
        }
    }
}

impl std::fmt::Display for RejectionCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mixed task ids in one batch: {0} and {1}")]
    MixedTasks(u8, u8),
    #[error("missing task {0} in report input")]
    MissingTask(u8),
    #[error("no items to score")]
    NoItems,
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Top-level pipeline failure. The variants map onto the CLI exit codes.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stall: {window} consecutive drafts rejected with no acceptance (last: {last})")]
    Stall { window: u64, last: String },
    #[error("backend auth failure: {0}")]
    Auth(String),
    #[error("io error: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
        let context = context.into();
        move |source| RunError::Io { context, source }
    }

    /// Process exit code contract: 0 success, 2 config, 3 stall, 4 auth, 5 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Stall { .. } => 3,
            RunError::Auth(_) => 4,
            RunError::Io { .. } => 5,
        }
    }
}

//! Submits decompilation prompts to a chat-completion endpoint and extracts
//! C source from the completions.

pub mod client;
pub mod config;
pub mod extract;

use thiserror::Error;

pub use client::{Candidate, Client, MESSAGE_LAYOUT};
pub use config::{DecodeConfig, DecodeMode, EndpointConfig, RetryPolicy};
pub use extract::extract_code;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("endpoint {url} unreachable after {attempts} attempt(s): {detail}")]
    EndpointUnreachable { url: String, attempts: u32, detail: String },
    #[error("endpoint rejected the request with status {status}: {body}")]
    EndpointRejected { status: u16, body: String },
    #[error("endpoint returned no completion text")]
    EmptyCompletion,
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid client configuration: {0}")]
    InvalidConfig(String),
    #[error("request archive: {0}")]
    Archive(String),
}

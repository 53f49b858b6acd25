//! Generation and proximity backend boundary.

use std::time::Duration;

use thiserror::Error;

/// Worker-chosen image identifier, persisted verbatim and never parsed by
/// the engine.
pub type ImageHandle = String;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Pipe, socket or process failure. Retried.
    #[error("transport error: {0}")]
    Transport(String),
    /// The worker answered with an error response. Not retried.
    #[error("worker error for request `{request_id}`: {message}")]
    Worker { request_id: String, message: String },
    /// Framing or correlation violation.
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub trait Generator: Send + Sync {
    /// Generates `k` images for `prompt`. Sample `i` is driven by
    /// `seed::sample_seed(seed, i)`.
    fn generate(&self, prompt: &str, k: u32, seed: u64) -> Result<Vec<ImageHandle>, BackendError>;
}

pub trait Proximity: Send + Sync {
    /// Raw score of `image` against the reference image of artwork `reference`.
    fn proximity(&self, image: &str, reference: &str, metric: &str) -> Result<f64, BackendError>;
}

/// A worker that serves both halves of the protocol.
pub trait Backend: Generator + Proximity {}

impl<T: Generator + Proximity> Backend for T {}

/// Retries transport errors with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            base_backoff: Duration::from_millis(100),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            retries: 0,
            base_backoff: Duration::ZERO,
        }
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transport() && attempt < self.retries => {
                    let wait = self.base_backoff * 2u32.pow(attempt);
                    tracing::warn!(attempt = attempt + 1, ?wait, "retrying after {e}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

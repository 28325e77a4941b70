//! Pluggable text-generation backends with prompt templating, dynamic
//! batching and record/replay cassettes. Every generation call in the
//! pipeline flows through here.

mod batch;
mod cassette;
mod mock;
mod template;

pub use batch::{dispatch_batched, BatchConfig, Gateway};
pub use cassette::{ReplayBackend, RecordingBackend};
pub use mock::{MockBackend, SyntheticBackend};
pub use template::{PromptTemplate, TemplateError, TemplateName, TemplateSet, VERBATIM_SEPARATOR};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::whitespace_token_count;

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    /// Transient transport failure; retried once per request.
    #[error("backend transport error: {0}")]
    Transport(String),
    /// Content-level failure; never retried.
    #[error("backend content error: {0}")]
    Content(String),
    #[error("prompt {index} is {tokens} tokens, over the backend limit of {limit}")]
    OversizePrompt {
        index: usize,
        tokens: usize,
        limit: usize,
    },
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Decoding parameters. `temperature == 0` requests deterministic decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_output_tokens: usize,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_output_tokens: 256,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidParams(
                "max_output_tokens must be >= 1".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Capability flags a backend can declare.
#[derive(Debug, Clone, Copy, Default)]
pub struct BackendDescriptor {
    /// Backend cannot tolerate concurrent generate calls.
    pub single_flight: bool,
}

/// A text-generation backend. Implementations must return exactly one
/// output per prompt, order-aligned, and tolerate concurrent calls unless
/// their descriptor says `single_flight`.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, prompts: &[String], params: &GenParams) -> Result<Vec<String>, GatewayError>;

    fn max_context_tokens(&self) -> usize;

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::default()
    }
}

/// Reject prompts over the backend's context limit before dispatch.
pub(crate) fn check_budget(
    prompts: &[String],
    limit: usize,
) -> Result<(), GatewayError> {
    for (index, p) in prompts.iter().enumerate() {
        let tokens = whitespace_token_count(p);
        if tokens > limit {
            return Err(GatewayError::OversizePrompt {
                index,
                tokens,
                limit,
            });
        }
    }
    Ok(())
}

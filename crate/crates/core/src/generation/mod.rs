//! Prompt assembly, completion backends and reply-overlap metrics.

mod backend;
mod metrics;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DialogueTurn;

pub use backend::{
    generate_reply, prompt_hash, AuditEntry, AuditLog, BackendError, CompletionBackend, HttpBackend,
    HttpBackendConfig, MockBackend, ReplayBackend, ReplayRecord, RetryPolicy, SamplingParams,
    ScriptedBackend,
};
pub use metrics::f1_unigram_overlap;
pub use prompt::{build_prompt, truncate_history, DEFAULT_PERSONA};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub item_id: String,
    pub persona_preamble: String,
    pub history: Vec<DialogueTurn>,
    pub student_utterance: String,
    pub token_budget: usize,
    /// Agent tag the resulting reply is filed under.
    pub backend_id: String,
}

/// Prompt budget left after reserving `safety_margin` (a fraction) of a
/// backend's context window for tokenizer mismatch.
pub fn effective_budget(max_prompt_tokens: usize, safety_margin: f64) -> usize {
    (max_prompt_tokens as f64 * (1.0 - safety_margin.clamp(0.0, 1.0))).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Reference,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateReply {
    pub item_id: String,
    pub agent: String,
    pub text: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uptake_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("prompt needs {required} tokens for persona and student utterance but the budget is {budget}")]
    BudgetExhausted { required: usize, budget: usize },
    #[error("backend {backend} unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable {
        backend: String,
        attempts: usize,
        last_error: String,
    },
    #[error("backend {backend} returned an empty completion for item {item_id}")]
    EmptyCompletion { backend: String, item_id: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

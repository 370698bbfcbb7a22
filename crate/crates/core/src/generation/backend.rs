use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_prompt, CandidateReply, GenerationError, GenerationRequest, Provenance};

/// Opaque sampling parameters forwarded to the backend and recorded in the
/// audit log.
pub type SamplingParams = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<String, BackendError>;
}

/// Hex SHA-256 of the prompt text; the key of replay fixtures.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Returns the same completion for every prompt.
pub struct MockBackend {
    reply: String,
}

impl MockBackend {
    pub fn echo(reply: impl Into<String>) -> Self {
        Self { reply: reply.into() }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, _prompt: &str, _params: &SamplingParams) -> Result<String, BackendError> {
        Ok(self.reply.clone())
    }
}

/// Plays back a fixed sequence of results, one per call; the last entry
/// repeats once the script runs out.
pub struct ScriptedBackend {
    script: Vec<Result<String, BackendError>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(script: Vec<Result<String, BackendError>>) -> Self {
        assert!(!script.is_empty(), "script must have at least one entry");
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, _prompt: &str, _params: &SamplingParams) -> Result<String, BackendError> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        self.script[i.min(self.script.len() - 1)].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_hash: String,
    pub completion: String,
}

/// Serves completions recorded ahead of time, keyed by prompt hash.
pub struct ReplayBackend {
    completions: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        Self {
            completions: records.into_iter().map(|r| (r.prompt_hash, r.completion)).collect(),
        }
    }

    /// Reads a line-delimited fixture of `{prompt_hash, completion}` records.
    pub fn from_file(path: &Path) -> Result<Self, GenerationError> {
        let file = File::open(path)
            .map_err(|e| GenerationError::Config(format!("cannot open replay file {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GenerationError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                GenerationError::Config(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, prompt: &str, _params: &SamplingParams) -> Result<String, BackendError> {
        let hash = prompt_hash(prompt);
        self.completions
            .get(&hash)
            .cloned()
            .ok_or_else(|| BackendError::Fatal(format!("no recorded completion for prompt {hash}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

/// Client for an OpenAI-style `POST {base_url}/completions` endpoint.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    token: String,
}

impl HttpBackend {
    /// Resolves the auth token up front so a missing variable fails before
    /// any request is made.
    pub fn from_env(config: &HttpBackendConfig) -> Result<Self, GenerationError> {
        let token = std::env::var(&config.auth_env).map_err(|_| {
            GenerationError::Config(format!("environment variable {} is not set", config.auth_env))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GenerationError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            token,
        })
    }
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<String, BackendError> {
        let mut body = serde_json::Map::new();
        body.insert("model".into(), self.model.clone().into());
        body.insert("prompt".into(), prompt.into());
        for (k, v) in params {
            body.insert(k.clone(), v.clone());
        }
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.token)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("HTTP {status}")));
        }
        let parsed: CompletionResponse = resp.json().map_err(|e| BackendError::Fatal(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::Fatal("response has no choices".into()))
    }
}

/// Exponential backoff without jitter, so retry timing is reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_retries: usize) -> Self {
        Self {
            max_retries,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
        }
    }

    pub fn backoff(&self, retry: usize) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(31) as u32);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub item_id: String,
    pub backend_id: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub params: SamplingParams,
    pub attempt: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

enum AuditSink {
    Memory,
    File(File),
}

/// Append-only record of every backend call. Appends from concurrent
/// workers are serialized through one lock; the file sink writes one JSON
/// line per entry.
pub struct AuditLog {
    sink: Mutex<(AuditSink, Vec<AuditEntry>)>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            sink: Mutex::new((AuditSink::Memory, Vec::new())),
        }
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            sink: Mutex::new((AuditSink::File(file), Vec::new())),
        })
    }

    fn lock(&self) -> MutexGuard<'_, (AuditSink, Vec<AuditEntry>)> {
        self.sink.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn append(&self, entry: AuditEntry) {
        let mut guard = self.lock();
        if let AuditSink::File(f) = &mut guard.0 {
            if let Ok(line) = serde_json::to_string(&entry) {
                if let Err(e) = writeln!(f, "{line}") {
                    tracing::warn!("audit log write failed: {e}");
                }
            }
        }
        guard.1.push(entry);
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.lock().1.clone()
    }
}

/// Builds the prompt, calls the backend with retries on transient errors and
/// returns the trimmed completion as a generated reply.
pub fn generate_reply(
    request: &GenerationRequest,
    backend: &dyn CompletionBackend,
    params: &SamplingParams,
    retry: &RetryPolicy,
    audit: &AuditLog,
) -> Result<CandidateReply, GenerationError> {
    let prompt = build_prompt(request)?;
    let hash = prompt_hash(&prompt);
    let mut last_error = String::new();
    for attempt in 0..=retry.max_retries {
        if attempt > 0 {
            let wait = retry.backoff(attempt - 1);
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        let result = backend.complete(&prompt, params);
        audit.append(AuditEntry {
            item_id: request.item_id.clone(),
            backend_id: request.backend_id.clone(),
            prompt_hash: hash.clone(),
            prompt: prompt.clone(),
            params: params.clone(),
            attempt,
            completion: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        match result {
            Ok(text) => {
                let text = text.trim();
                if text.is_empty() {
                    return Err(GenerationError::EmptyCompletion {
                        backend: request.backend_id.clone(),
                        item_id: request.item_id.clone(),
                    });
                }
                return Ok(CandidateReply {
                    item_id: request.item_id.clone(),
                    agent: request.backend_id.clone(),
                    text: text.to_string(),
                    provenance: Provenance::Generated,
                    uptake_score: None,
                    perplexity: None,
                });
            }
            Err(BackendError::Transient(msg)) => last_error = msg,
            Err(BackendError::Fatal(msg)) => {
                return Err(GenerationError::BackendUnavailable {
                    backend: request.backend_id.clone(),
                    attempts: attempt + 1,
                    last_error: msg,
                })
            }
        }
    }
    Err(GenerationError::BackendUnavailable {
        backend: request.backend_id.clone(),
        attempts: retry.max_retries + 1,
        last_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::DEFAULT_PERSONA;

    fn request() -> GenerationRequest {
        GenerationRequest {
            item_id: "item-1".into(),
            persona_preamble: DEFAULT_PERSONA.into(),
            history: vec![],
            student_utterance: "excitement".into(),
            token_budget: 200,
            backend_id: "mock".into(),
        }
    }

    fn transient() -> Result<String, BackendError> {
        Err(BackendError::Transient("503".into()))
    }

    #[test]
    fn mock_echo() {
        let audit = AuditLog::in_memory();
        let reply = generate_reply(
            &request(),
            &MockBackend::echo("  ok \n"),
            &SamplingParams::new(),
            &RetryPolicy::no_wait(3),
            &audit,
        )
        .unwrap();
        assert_eq!(reply.text, "ok");
        assert_eq!(reply.provenance, Provenance::Generated);
        assert_eq!(reply.agent, "mock");
        assert_eq!(audit.entries().len(), 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let backend = ScriptedBackend::new(vec![transient(), transient(), Ok("fine".into())]);
        let audit = AuditLog::in_memory();
        let reply = generate_reply(&request(), &backend, &SamplingParams::new(), &RetryPolicy::no_wait(3), &audit)
            .unwrap();
        assert_eq!(reply.text, "fine");
        let entries = audit.entries();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries.iter().filter(|e| e.error.is_some()).count(), 2);
        assert_eq!(entries[2].attempt, 2);
    }

    #[test]
    fn exhausts_retries() {
        let backend = ScriptedBackend::new(vec![transient(), transient(), transient(), transient(), Ok("late".into())]);
        let audit = AuditLog::in_memory();
        let err = generate_reply(&request(), &backend, &SamplingParams::new(), &RetryPolicy::no_wait(3), &audit)
            .unwrap_err();
        assert!(matches!(err, GenerationError::BackendUnavailable { attempts: 4, .. }));
        assert_eq!(backend.calls(), 4);
    }

    #[test]
    fn fatal_is_not_retried() {
        let backend = ScriptedBackend::new(vec![Err(BackendError::Fatal("400".into()))]);
        let err = generate_reply(
            &request(),
            &backend,
            &SamplingParams::new(),
            &RetryPolicy::no_wait(3),
            &AuditLog::in_memory(),
        )
        .unwrap_err();
        assert!(matches!(err, GenerationError::BackendUnavailable { attempts: 1, .. }));
    }

    #[test]
    fn whitespace_completion_is_empty() {
        let err = generate_reply(
            &request(),
            &MockBackend::echo(" \n\t"),
            &SamplingParams::new(),
            &RetryPolicy::no_wait(0),
            &AuditLog::in_memory(),
        )
        .unwrap_err();
        assert!(matches!(err, GenerationError::EmptyCompletion { .. }));
    }

    #[test]
    fn replay_lookup() {
        let prompt = build_prompt(&request()).unwrap();
        let backend = ReplayBackend::from_records([ReplayRecord {
            prompt_hash: prompt_hash(&prompt),
            completion: "Excitement is a good one!".into(),
        }]);
        let audit = AuditLog::in_memory();
        let a = generate_reply(&request(), &backend, &SamplingParams::new(), &RetryPolicy::no_wait(0), &audit).unwrap();
        let b = generate_reply(&request(), &backend, &SamplingParams::new(), &RetryPolicy::no_wait(0), &audit).unwrap();
        assert_eq!(a, b);
        let mut other = request();
        other.student_utterance = "something else".into();
        assert!(generate_reply(&other, &backend, &SamplingParams::new(), &RetryPolicy::no_wait(0), &audit).is_err());
    }

    #[test]
    fn missing_auth_env_fails_early() {
        let cfg = HttpBackendConfig {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            auth_env: "TUTORBENCH_TEST_SURELY_UNSET_VAR".into(),
            timeout_secs: 1,
        };
        assert!(matches!(HttpBackend::from_env(&cfg), Err(GenerationError::Config(_))));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_millis(350),
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(1), Duration::from_millis(200));
        assert_eq!(p.backoff(2), Duration::from_millis(350));
    }
}

//! Chat-completion access shared by the generator, user simulator, agent,
//! reflection and mutation roles.

mod http;
mod scripted;

pub use http::HttpClient;
pub use scripted::{ScriptStep, ScriptedClient};

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::Assistant, content: content.into() }
    }
}

/// Which pipeline role issued a request; selects the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestTag {
    Generator,
    User,
    Agent,
    Reflection,
    Mutation,
}

impl RequestTag {
    pub const ALL: [RequestTag; 5] = [
        RequestTag::Generator,
        RequestTag::User,
        RequestTag::Agent,
        RequestTag::Reflection,
        RequestTag::Mutation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestTag::Generator => "generator",
            RequestTag::User => "user",
            RequestTag::Agent => "agent",
            RequestTag::Reflection => "reflection",
            RequestTag::Mutation => "mutation",
        }
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    pub tag: RequestTag,
    /// Finer-grained purpose within a role, e.g. "population" or "expansion".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl CompletionRequest {
    pub fn new(tag: RequestTag, messages: Vec<ChatMessage>) -> Self {
        CompletionRequest {
            model: String::new(),
            messages,
            temperature: 1.0,
            max_tokens: None,
            tag,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn last_message(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("request has no messages".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} must be finite and >= 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Option<TokenUsage>,
    /// Attempts beyond the first.
    #[serde(default)]
    pub retries: u32,
}

impl CompletionResponse {
    pub fn text(text: impl Into<String>) -> Self {
        CompletionResponse { text: text.into(), usage: None, retries: 0 }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out after {elapsed_secs:.3}s")]
    Timeout { elapsed_secs: f64 },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no scripted response matches a {tag} request ending with {last_message:?}")]
    Unmatched { tag: RequestTag, last_message: String },
    #[error("scripted sequence {rule} exhausted after {calls} calls")]
    Exhausted { rule: String, calls: usize },
    #[error("scripted failure: {0}")]
    Scripted(String),
}

impl LlmError {
    /// Transport failures and throttling statuses are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => matches!(status, 429 | 502 | 503 | 504),
            _ => false,
        }
    }

    /// Credential or configuration failures that no retry or new request
    /// can fix.
    pub fn is_fatal(&self) -> bool {
        match self {
            LlmError::Config(_) => true,
            LlmError::Status { status, .. } => matches!(status, 401 | 403 | 404),
            _ => false,
        }
    }
}

/// A chat-completion backend. Implementations must be shareable across threads.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 500,
            multiplier: 2.0,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, for `attempt >= 1`.
    pub fn backoff_ms(&self, attempt: u32) -> u64 {
        let scaled = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32 - 1);
        (scaled.min(self.max_backoff_ms as f64)) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleModels {
    pub generator: String,
    pub user: String,
    pub agent: String,
    pub reflection: String,
    pub mutation: String,
}

impl Default for RoleModels {
    fn default() -> Self {
        let m = "gpt-4.1".to_string();
        RoleModels {
            generator: m.clone(),
            user: m.clone(),
            agent: m.clone(),
            reflection: m.clone(),
            mutation: m,
        }
    }
}

impl RoleModels {
    pub fn for_tag(&self, tag: RequestTag) -> &str {
        match tag {
            RequestTag::Generator => &self.generator,
            RequestTag::User => &self.user,
            RequestTag::Agent => &self.agent,
            RequestTag::Reflection => &self.reflection,
            RequestTag::Mutation => &self.mutation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub models: RoleModels,
    pub max_workers: usize,
    pub timeout_secs: f64,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub retry: RetryPolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            models: RoleModels::default(),
            max_workers: 30,
            timeout_secs: 3600.0,
            temperature: 1.0,
            max_tokens: None,
            retry: RetryPolicy::default(),
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_workers == 0 {
            return Err(LlmError::Config("max_workers must be >= 1".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(LlmError::Config("timeout_secs must be > 0".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(LlmError::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// One entry per request, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: usize,
    pub tag: RequestTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub model: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub retries: u32,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

/// Routes requests to per-role models, fans batches out over a bounded
/// worker pool and keeps an append-only call log.
pub struct Gateway {
    client: Arc<dyn ChatClient>,
    models: RoleModels,
    temperature: f64,
    max_tokens: Option<u32>,
    max_workers: usize,
    log: Mutex<Vec<CallRecord>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("models", &self.models)
            .field("max_workers", &self.max_workers)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(client: Arc<dyn ChatClient>, models: RoleModels, max_workers: usize) -> Self {
        Gateway {
            client,
            models,
            temperature: 1.0,
            max_tokens: None,
            max_workers: max_workers.max(1),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Gateway over an HTTP client built from `config`.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let client = HttpClient::from_config(config)?;
        Ok(Gateway {
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            ..Gateway::new(Arc::new(client), config.models.clone(), config.max_workers)
        })
    }

    pub fn with_client(client: impl ChatClient + 'static) -> Self {
        Gateway::new(Arc::new(client), RoleModels::default(), 4)
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.max_workers = workers.max(1);
        self
    }

    pub fn max_workers(&self) -> usize {
        self.max_workers
    }

    /// Builds a request routed to the model configured for `tag`.
    pub fn request(&self, tag: RequestTag, messages: Vec<ChatMessage>) -> CompletionRequest {
        CompletionRequest {
            model: self.models.for_tag(tag).to_string(),
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            tag,
            label: None,
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let start = Instant::now();
        let result = request.validate().and_then(|_| self.client.complete(request));
        let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        let mut log = self.log.lock().expect("call log poisoned");
        let seq = log.len();
        log.push(CallRecord {
            seq,
            tag: request.tag,
            label: request.label.clone(),
            model: request.model.clone(),
            ok: result.is_ok(),
            error: result.as_ref().err().map(|e| e.to_string()),
            retries: result.as_ref().map(|r| r.retries).unwrap_or(0),
            latency_ms,
            usage: result.as_ref().ok().and_then(|r| r.usage),
        });
        result
    }

    pub fn complete_text(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.complete(request).map(|r| r.text)
    }

    /// Runs `requests` with at most `max_workers` in flight. Results come
    /// back in input order; a failure occupies its own slot only.
    pub fn complete_batch(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResponse, LlmError>> {
        run_bounded(requests.len(), self.max_workers, |i| self.complete(&requests[i]))
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self, tag: RequestTag, label: Option<&str>) -> usize {
        self.log
            .lock()
            .expect("call log poisoned")
            .iter()
            .filter(|r| r.tag == tag && (label.is_none() || r.label.as_deref() == label))
            .count()
    }

    /// Writes the call log as one JSON object per line.
    pub fn write_call_log(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in self.call_log() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

/// Evaluates `job(0..n)` on up to `workers` scoped threads and returns
/// the results in index order.
pub fn run_bounded<T, F>(n: usize, workers: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if n == 0 {
        return Vec::new();
    }
    let workers = workers.clamp(1, n);
    if workers == 1 {
        return (0..n).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = job(i);
                slots.lock().expect("result slots poisoned")[i] = Some(value);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|v| v.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn req(tag: RequestTag, text: &str) -> CompletionRequest {
        CompletionRequest::new(tag, vec![ChatMessage::user(text)])
    }

    #[test]
    fn scripted_by_tag() {
        let gw = Gateway::with_client(ScriptedClient::new().on(RequestTag::User, ["hi"]));
        assert_eq!(gw.complete_text(&req(RequestTag::User, "x")).unwrap(), "hi");
        assert!(matches!(
            gw.complete_text(&req(RequestTag::User, "x")),
            Err(LlmError::Exhausted { .. })
        ));
        assert!(matches!(
            gw.complete_text(&req(RequestTag::Agent, "x")),
            Err(LlmError::Unmatched { .. })
        ));
        let log = gw.call_log();
        assert_eq!(log.len(), 3);
        assert_eq!(log.iter().filter(|r| r.ok).count(), 1);
        assert_eq!(log.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn invalid_requests_are_logged_and_rejected() {
        let gw = Gateway::with_client(ScriptedClient::new().repeat(RequestTag::User, "ok"));
        let empty = CompletionRequest::new(RequestTag::User, vec![]);
        assert!(matches!(gw.complete(&empty), Err(LlmError::InvalidRequest(_))));
        let mut hot = req(RequestTag::User, "x");
        hot.temperature = -1.0;
        assert!(gw.complete(&hot).is_err());
        assert_eq!(gw.call_log().len(), 2);
    }

    fn delayed_echo() -> ScriptedClient {
        ScriptedClient::new().handler(RequestTag::Agent, |r| {
            let ms: u64 = r.last_message().parse().unwrap();
            std::thread::sleep(Duration::from_millis(ms));
            if ms == 13 {
                Err(LlmError::Scripted("boom".into()))
            } else {
                Ok(format!("done {ms}"))
            }
        })
    }

    #[test]
    fn batch_preserves_order_with_shuffled_completion() {
        let delays = [40, 5, 30, 1, 20];
        let requests: Vec<_> = delays.iter().map(|d| req(RequestTag::Agent, &d.to_string())).collect();
        let expected: Vec<String> = delays.iter().map(|d| format!("done {d}")).collect();
        for workers in [1, 2, 5, 8] {
            let gw = Gateway::with_client(delayed_echo()).with_workers(workers);
            let out: Vec<String> = gw
                .complete_batch(&requests)
                .into_iter()
                .map(|r| r.unwrap().text)
                .collect();
            assert_eq!(out, expected, "workers={workers}");
            assert_eq!(gw.call_log().len(), 5);
        }
    }

    #[test]
    fn batch_failure_is_positional() {
        let delays = [3, 13, 2, 1, 4];
        let requests: Vec<_> = delays.iter().map(|d| req(RequestTag::Agent, &d.to_string())).collect();
        let gw = Gateway::with_client(delayed_echo()).with_workers(3);
        let out = gw.complete_batch(&requests);
        assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 4);
        assert!(out[1].is_err());
    }

    #[test]
    fn run_bounded_caps_concurrency() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let out = run_bounded(12, 3, |i| {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            live.fetch_sub(1, Ordering::SeqCst);
            i * 2
        });
        assert_eq!(out, (0..12).map(|i| i * 2).collect::<Vec<_>>());
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy { max_attempts: 5, initial_backoff_ms: 100, multiplier: 2.0, max_backoff_ms: 300 };
        assert_eq!([1, 2, 3, 4].map(|a| p.backoff_ms(a)), [100, 200, 300, 300]);
    }

    #[test]
    fn config_validation() {
        assert!(GatewayConfig::default().validate().is_ok());
        let bad = GatewayConfig { max_workers: 0, ..GatewayConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!(GatewayConfig::default().max_workers, 30);
        assert_eq!(GatewayConfig::default().timeout_secs, 3600.0);
    }

    #[test]
    fn call_log_is_jsonl() {
        let gw = Gateway::with_client(ScriptedClient::new().repeat(RequestTag::User, "ok"));
        gw.complete(&req(RequestTag::User, "a").with_label("turn")).unwrap();
        gw.complete(&req(RequestTag::User, "b")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calls.jsonl");
        gw.write_call_log(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<CallRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].label.as_deref(), Some("turn"));
        assert_eq!(gw.call_count(RequestTag::User, Some("turn")), 1);
        assert_eq!(gw.call_count(RequestTag::User, None), 2);
    }
}

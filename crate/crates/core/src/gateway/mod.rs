//! LLM gateway: every model call in the system goes through the [`Gateway`]
//! trait, so pipelines run identically against a live OpenAI-compatible
//! endpoint ([`live::LiveGateway`]) or a recorded transcript
//! ([`mock::MockGateway`]) with zero network access.

pub mod live;
pub mod mock;
pub mod template;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

pub use template::{render, Bindings, TemplateName};

/// Decoding parameters forwarded with each chat request.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    /// Greedy decoding; pipelines that need diversity override this.
    fn default() -> Self {
        DecodingParams { temperature: 0.0, top_p: 1.0, max_tokens: 1024 }
    }
}

/// One chat-completion request: a fully rendered prompt plus routing info.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChatRequest {
    /// Which pipeline stage produced this prompt.
    pub template: TemplateName,
    /// The rendered prompt, sent as a single user message.
    pub prompt: String,
    pub params: DecodingParams,
    /// Overrides the gateway's default model when set.
    pub model: Option<String>,
}

impl ChatRequest {
    pub fn new(template: TemplateName, prompt: String) -> Self {
        ChatRequest { template, prompt, params: DecodingParams::default(), model: None }
    }

    pub fn with_params(mut self, params: DecodingParams) -> Self {
        self.params = params;
        self
    }
}

/// Token usage reported for one reply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// One chat-completion reply.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChatReply {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("template {template}: placeholder {{{placeholder}}} is unbound")]
    UnboundPlaceholder { template: &'static str, placeholder: String },
    #[error("no transcript entry for {template} request (key {key})")]
    MissingTranscriptEntry { template: &'static str, key: String },
    #[error("endpoint returned status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed endpoint reply: {0}")]
    MalformedReply(String),
    #[error("request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("transcript parse error at line {line}: {msg}")]
    TranscriptParse { line: usize, msg: String },
}

/// Abstract chat backend. Implementations must be safe to share across
/// threads; batch runners call `chat` concurrently.
pub trait Gateway: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError>;
}

impl<G: Gateway + ?Sized> Gateway for &G {
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        (**self).chat(req)
    }
}

impl<G: Gateway + ?Sized> Gateway for std::sync::Arc<G> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        (**self).chat(req)
    }
}

/// Global count of outbound network requests made by this process.
///
/// Only [`live::LiveGateway`] and the HTTP embedding client increment it, so
/// tests can assert that offline runs touched no socket.
pub static NET_REQUESTS: AtomicU64 = AtomicU64::new(0);

pub fn net_request_count() -> u64 {
    NET_REQUESTS.load(Ordering::SeqCst)
}

pub(crate) fn record_net_request() {
    NET_REQUESTS.fetch_add(1, Ordering::SeqCst);
}

/// Running totals over all replies served by a gateway.
#[derive(Debug, Default)]
pub struct UsageStats {
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    per_template: Mutex<std::collections::BTreeMap<TemplateName, u64>>,
}

impl UsageStats {
    pub fn record(&self, template: TemplateName, usage: TokenUsage) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompt_tokens.fetch_add(usage.prompt_tokens, Ordering::SeqCst);
        self.completion_tokens.fetch_add(usage.completion_tokens, Ordering::SeqCst);
        *self.per_template.lock().unwrap().entry(template).or_insert(0) += 1;
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.prompt_tokens.load(Ordering::SeqCst)
    }

    pub fn completion_tokens(&self) -> u64 {
        self.completion_tokens.load(Ordering::SeqCst)
    }

    pub fn calls_for(&self, template: TemplateName) -> u64 {
        self.per_template.lock().unwrap().get(&template).copied().unwrap_or(0)
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls(),
            prompt_tokens: self.prompt_tokens(),
            completion_tokens: self.completion_tokens(),
            per_template: self
                .per_template
                .lock()
                .unwrap()
                .iter()
                .map(|(t, n)| (t.as_str().to_string(), *n))
                .collect(),
        }
    }
}

/// Serializable view of [`UsageStats`] for run reports.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UsageSnapshot {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub per_template: std::collections::BTreeMap<String, u64>,
}

//! Blocking client for any OpenAI-compatible chat endpoint.
//!
//! Requests go to `{base_url}/v1/chat/completions` with the prompt as a
//! single user message; the reply text is `choices[0].message.content`.
//! Transient failures (HTTP 429/5xx, transport errors) are retried with
//! exponential backoff; a counting semaphore caps in-flight requests so batch
//! runners cannot stampede the endpoint.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::{record_net_request, ChatReply, ChatRequest, Gateway, GatewayError, TokenUsage, UsageStats};

/// Connection settings for a live endpoint.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LiveConfig {
    /// Endpoint root, e.g. `http://localhost:8000` (no trailing slash).
    pub base_url: String,
    /// Model name sent when the request carries none.
    pub model: String,
    /// Bearer token; omitted from the request when empty.
    #[serde(default)]
    pub api_key: String,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_max_attempts() -> u32 {
    4
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_max_in_flight() -> usize {
    8
}
fn default_timeout_secs() -> u64 {
    120
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            base_url: "http://localhost:8000".to_string(),
            model: "default".to_string(),
            api_key: String::new(),
            max_attempts: default_max_attempts(),
            initial_backoff_ms: default_backoff_ms(),
            max_in_flight: default_max_in_flight(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(serde::Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(serde::Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(serde::Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(serde::Deserialize)]
struct WireReplyMessage {
    content: Option<String>,
}

#[derive(serde::Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(serde::Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

/// Counting semaphore; `std::sync` has no blocking semaphore and pulling in
/// an async runtime for one primitive is not worth it.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

/// Gateway over a live OpenAI-compatible endpoint.
pub struct LiveGateway {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    semaphore: Semaphore,
    pub stats: UsageStats,
}

impl LiveGateway {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()?;
        let semaphore = Semaphore::new(config.max_in_flight);
        Ok(LiveGateway { config, client, semaphore, stats: UsageStats::default() })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let model = req.model.as_deref().unwrap_or(&self.config.model);
        let wire = WireRequest {
            model,
            messages: [WireMessage { role: "user", content: &req.prompt }],
            temperature: req.params.temperature,
            top_p: req.params.top_p,
            max_tokens: req.params.max_tokens,
        };
        let mut builder = self.client.post(self.endpoint()).json(&wire);
        if !self.config.api_key.is_empty() {
            builder = builder.bearer_auth(&self.config.api_key);
        }
        record_net_request();
        let resp = builder.send()?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(GatewayError::HttpStatus { status: status.as_u16(), body });
        }
        let reply: WireReply = resp
            .json()
            .map_err(|e| GatewayError::MalformedReply(e.to_string()))?;
        let choice = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedReply("empty choices array".to_string()))?;
        let text = choice
            .message
            .content
            .ok_or_else(|| GatewayError::MalformedReply("null message content".to_string()))?;
        let usage = reply.usage.unwrap_or_default();
        Ok(ChatReply {
            text,
            usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
        })
    }
}

fn is_retryable(err: &GatewayError) -> bool {
    match err {
        GatewayError::HttpStatus { status, .. } => *status == 429 || *status >= 500,
        GatewayError::Transport(_) => true,
        _ => false,
    }
}

impl Gateway for LiveGateway {
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let _permit = self.semaphore.acquire();
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let attempts = self.config.max_attempts.max(1);
        let mut last_err: Option<GatewayError> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(req) {
                Ok(reply) => {
                    self.stats.record(req.template, reply.usage);
                    return Ok(reply);
                }
                Err(err) if is_retryable(&err) => {
                    log::warn!(
                        "chat attempt {}/{} failed ({}), retrying",
                        attempt + 1,
                        attempts,
                        err
                    );
                    last_err = Some(err);
                }
                Err(err) => return Err(err),
            }
        }
        Err(GatewayError::Exhausted {
            attempts,
            last: last_err.map(|e| e.to_string()).unwrap_or_else(|| "unknown".to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::TemplateName;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Minimal single-request HTTP stub on a loopback socket.
    fn one_shot_server(status_line: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let trimmed = line.trim();
                if let Some(v) = trimmed.strip_prefix("Content-Length:") {
                    content_length = v.trim().parse().unwrap();
                } else if let Some(v) = trimmed.strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                if trimmed.is_empty() {
                    break;
                }
            }
            let mut req_body = vec![0u8; content_length];
            reader.read_exact(&mut req_body).unwrap();
            let response = format!(
                "{status_line}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
            String::from_utf8(req_body).unwrap()
        });
        (format!("http://{addr}"), handle)
    }

    fn config(base_url: String) -> LiveConfig {
        LiveConfig {
            base_url,
            model: "test-model".to_string(),
            max_attempts: 1,
            initial_backoff_ms: 1,
            timeout_secs: 5,
            ..LiveConfig::default()
        }
    }

    #[test]
    fn parses_openai_shape_and_counts_net_requests() {
        let body = r#"{"choices":[{"message":{"content":"Paris"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;
        let (url, handle) = one_shot_server("HTTP/1.1 200 OK", body);
        let gw = LiveGateway::new(config(url)).unwrap();
        let before = crate::gateway::net_request_count();
        let reply = gw
            .chat(&ChatRequest::new(TemplateName::AnswerNor, "capital of France?".to_string()))
            .unwrap();
        assert_eq!(reply.text, "Paris");
        assert_eq!(reply.usage.prompt_tokens, 7);
        assert_eq!(reply.usage.completion_tokens, 2);
        assert_eq!(crate::gateway::net_request_count(), before + 1);
        let sent = handle.join().unwrap();
        let v: serde_json::Value = serde_json::from_str(&sent).unwrap();
        assert_eq!(v["model"], "test-model");
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["messages"][0]["content"], "capital of France?");
        assert_eq!(v["temperature"], 0.0);
    }

    #[test]
    fn http_error_status_is_reported() {
        let (url, handle) = one_shot_server("HTTP/1.1 400 Bad Request", r#"{"error":"bad"}"#);
        let gw = LiveGateway::new(config(url)).unwrap();
        let err = gw
            .chat(&ChatRequest::new(TemplateName::AnswerNor, "q".to_string()))
            .unwrap_err();
        match err {
            GatewayError::HttpStatus { status, .. } => assert_eq!(status, 400),
            other => panic!("unexpected: {other}"),
        }
        handle.join().unwrap();
    }

    #[test]
    fn retryable_failure_exhausts_attempts() {
        // 503 twice -> Exhausted after max_attempts=2.
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            for _ in 0..2 {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let t = line.trim().to_ascii_lowercase();
                    if let Some(v) = t.strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                    if line.trim().is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0u8; content_length];
                reader.read_exact(&mut buf).unwrap();
                stream
                    .write_all(b"HTTP/1.1 503 Service Unavailable\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
                    .unwrap();
            }
        });
        let mut cfg = config(format!("http://{addr}"));
        cfg.max_attempts = 2;
        let gw = LiveGateway::new(cfg).unwrap();
        let err = gw
            .chat(&ChatRequest::new(TemplateName::AnswerNor, "q".to_string()))
            .unwrap_err();
        match err {
            GatewayError::Exhausted { attempts, .. } => assert_eq!(attempts, 2),
            other => panic!("unexpected: {other}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn semaphore_limits_concurrency() {
        let sem = std::sync::Arc::new(Semaphore::new(2));
        let active = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let peak = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let sem = sem.clone();
            let active = active.clone();
            let peak = peak.clone();
            handles.push(std::thread::spawn(move || {
                let _g = sem.acquire();
                let now = active.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                peak.fetch_max(now, std::sync::atomic::Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(10));
                active.fetch_sub(1, std::sync::atomic::Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(std::sync::atomic::Ordering::SeqCst) <= 2);
    }
}

//! Transcript-replay gateway for offline runs.
//!
//! A transcript is a JSONL file of `{"key": <hex>, "reply": <text>}` records.
//! The key is a SHA-256 over the template name, the decoding parameters, and
//! the rendered prompt, so the same prompt issued under different sampling
//! settings (as the preference-data sampler does) maps to distinct entries.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{ChatReply, ChatRequest, Gateway, GatewayError, TokenUsage, UsageStats};

/// Replay key for one request: hex SHA-256 of template name, decoding
/// parameters, and prompt, each on its own line.
pub fn transcript_key(req: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(req.template.as_str().as_bytes());
    hasher.update(b"\n");
    hasher.update(
        format!("{:?}|{:?}|{}", req.params.temperature, req.params.top_p, req.params.max_tokens)
            .as_bytes(),
    );
    hasher.update(b"\n");
    hasher.update(req.prompt.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct TranscriptRecord {
    key: String,
    reply: String,
}

/// An in-memory transcript: replay key -> canned reply.
#[derive(Debug, Default, Clone)]
pub struct Transcript {
    entries: HashMap<String, String>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    /// Registers a reply under an explicit precomputed key.
    pub fn insert_key(&mut self, key: String, reply: String) {
        self.entries.insert(key, reply);
    }

    /// Registers a reply for a concrete request (key derived automatically).
    pub fn insert(&mut self, req: &ChatRequest, reply: &str) {
        self.entries.insert(transcript_key(req), reply.to_string());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut entries = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TranscriptRecord =
                serde_json::from_str(&line).map_err(|e| GatewayError::TranscriptParse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            entries.insert(rec.key, rec.reply);
        }
        Ok(Transcript { entries })
    }

    /// Writes entries as JSONL, sorted by key for stable diffs.
    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for key in keys {
            let rec = TranscriptRecord { key: key.clone(), reply: self.entries[key].clone() };
            serde_json::to_writer(&mut file, &rec).map_err(|e| {
                GatewayError::TranscriptParse { line: 0, msg: e.to_string() }
            })?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }
}

/// Record of one call the mock served, for assertions on call order/content.
#[derive(Debug, Clone)]
pub struct LoggedCall {
    pub request: ChatRequest,
    pub reply: String,
}

/// Gateway that answers exclusively from a transcript. Never opens a socket;
/// an unmatched request is an error, not a fallthrough.
pub struct MockGateway {
    transcript: Transcript,
    log: Mutex<Vec<LoggedCall>>,
    pub stats: UsageStats,
}

impl MockGateway {
    pub fn new(transcript: Transcript) -> Self {
        MockGateway { transcript, log: Mutex::new(Vec::new()), stats: UsageStats::default() }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        Ok(MockGateway::new(Transcript::load(path)?))
    }

    /// All calls served so far, in order.
    pub fn calls(&self) -> Vec<LoggedCall> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

/// Deterministic stand-in for provider token accounting: whitespace-separated
/// token count of prompt and reply.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl Gateway for MockGateway {
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let key = transcript_key(req);
        let reply = self.transcript.entries.get(&key).ok_or_else(|| {
            GatewayError::MissingTranscriptEntry { template: req.template.as_str(), key: key.clone() }
        })?;
        let usage = TokenUsage {
            prompt_tokens: approx_tokens(&req.prompt),
            completion_tokens: approx_tokens(reply),
        };
        self.stats.record(req.template, usage);
        self.log
            .lock()
            .unwrap()
            .push(LoggedCall { request: req.clone(), reply: reply.clone() });
        Ok(ChatReply { text: reply.clone(), usage })
    }
}

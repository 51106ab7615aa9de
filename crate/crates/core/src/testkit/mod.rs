//! Deterministic gateway doubles for offline tests and experiments.
//!
//! These complement [`crate::gateway::mock::MockGateway`] (exact transcript
//! replay) when a test wants behavioral rather than scripted replies: an
//! oracle selector that accepts every offered triple, one that accepts
//! nothing, and a FIFO queue of canned replies. The [`demo`] submodule adds
//! a complete miniature world (KG, corpus, embeddings, scripted dialogue)
//! for end-to-end replay tests.

pub mod demo;

use std::sync::Mutex;

use crate::gateway::mock::approx_tokens;
use crate::gateway::{
    ChatReply, ChatRequest, DecodingParams, Gateway, GatewayError, TemplateName, TokenUsage,
};

/// A logged (template, prompt, decoding-params) triple.
#[derive(Debug, Clone)]
pub struct SeenCall {
    pub template: TemplateName,
    pub prompt: String,
    pub params: DecodingParams,
}

/// Replies with the prompt itself. Because selection prompts embed every
/// candidate triple in bracket form, echoing them selects everything —
/// turning spreading activation into plain breadth-first expansion, which is
/// exactly what graph-oracle tests need.
#[derive(Debug, Default)]
pub struct AcceptAllGateway {
    log: Mutex<Vec<SeenCall>>,
}

impl AcceptAllGateway {
    pub fn calls(&self) -> Vec<SeenCall> {
        self.log.lock().unwrap().clone()
    }
}

impl Gateway for AcceptAllGateway {
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        self.log
            .lock()
            .unwrap()
            .push(SeenCall { template: req.template, prompt: req.prompt.clone(), params: req.params });
        Ok(ChatReply {
            text: req.prompt.clone(),
            usage: TokenUsage {
                prompt_tokens: approx_tokens(&req.prompt),
                completion_tokens: approx_tokens(&req.prompt),
            },
        })
    }
}

/// Replies with fixed prose containing no bracketed triples, so every
/// selection comes back empty.
#[derive(Debug, Default, Clone, Copy)]
pub struct RejectAllGateway;

impl Gateway for RejectAllGateway {
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let text = "None of these are relevant.".to_string();
        Ok(ChatReply {
            usage: TokenUsage {
                prompt_tokens: approx_tokens(&req.prompt),
                completion_tokens: approx_tokens(&text),
            },
            text,
        })
    }
}

/// Pops pre-loaded replies in FIFO order regardless of the prompt; errors
/// when the queue runs dry. Useful when a test cares about sequencing, not
/// prompt content.
#[derive(Debug, Default)]
pub struct QueueGateway {
    replies: Mutex<std::collections::VecDeque<String>>,
    log: Mutex<Vec<SeenCall>>,
}

impl QueueGateway {
    pub fn new(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        QueueGateway {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, reply: impl Into<String>) {
        self.replies.lock().unwrap().push_back(reply.into());
    }

    pub fn calls(&self) -> Vec<SeenCall> {
        self.log.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl Gateway for QueueGateway {
    fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let reply = self.replies.lock().unwrap().pop_front().ok_or_else(|| {
            GatewayError::MissingTranscriptEntry {
                template: req.template.as_str(),
                key: "queue exhausted".to_string(),
            }
        })?;
        self.log
            .lock()
            .unwrap()
            .push(SeenCall { template: req.template, prompt: req.prompt.clone(), params: req.params });
        Ok(ChatReply {
            usage: TokenUsage {
                prompt_tokens: approx_tokens(&req.prompt),
                completion_tokens: approx_tokens(&reply),
            },
            text: reply,
        })
    }
}

//! Engine for knowledge-graph-guided retrieval-augmented question answering.
//!
//! The crate is organized around one query flow: seed entities are selected
//! from a triple knowledge graph by dense retrieval over entity descriptions,
//! a query-relevant subgraph is grown by LLM-guided spreading activation,
//! the subgraph summary drives query expansion over a passage corpus, and the
//! final answer is generated from a fact-enhanced passage note. Every LLM
//! call goes through [`gateway::Gateway`], which has a deterministic
//! transcript-replay mock, so the whole flow is testable offline.
//!
//! Modules:
//! - [`kg`]: immutable triple store with entity descriptions, completeness
//!   filtering, head-entity adjacency, and a binary snapshot format.
//! - [`index`]: exact top-k inner-product search over embedding matrices,
//!   plus embedding clients (HTTP service, cache, hash-based test embedder).
//! - [`gateway`]: prompt templates, an OpenAI-compatible chat client with
//!   retries, and the scripted mock.
//! - [`activation`]: seed selection and iterative spreading activation with
//!   an activation memory and subgraph summarization.
//! - [`pipeline`]: the four run modes (no-retrieval, vanilla RAG, vanilla
//!   query expansion, KG-infused) and per-question session traces.
//! - [`eval`]: QA metrics (Acc/F1/EM and their average) with SQuAD-style
//!   normalization.
//! - [`dpo`]: preference-pair dataset construction by best/worst judging of
//!   sampled knowledge-augmentation outputs, and the DPO loss.

pub mod activation;
pub mod dpo;
pub mod eval;
pub mod gateway;
pub mod index;
pub mod kg;
pub mod pipeline;
pub mod testkit;

pub use activation::{ActivationConfig, ActivationMemory, RoundRecord, SubgraphSummary};
pub use dpo::{build_dataset, dpo_loss, PreferenceExample, SamplingGrid};
pub use eval::{evaluate, MetricReport, QAExample};
pub use gateway::{ChatReply, ChatRequest, DecodingParams, Gateway, TemplateName};
pub use index::{EmbeddingMatrix, Passage, ScoredHit};
pub use kg::{FilterStats, KgStore, RawKg};
pub use pipeline::{Mode, QuerySession, RetrievalPlan};

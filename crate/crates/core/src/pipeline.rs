//! Query pipelines: the KG-infused flow and its three comparison modes.
//!
//! Stage sequences per mode:
//! - `nor`: answer from the question alone.
//! - `vanilla_rag`: retrieve with the raw query, write a passage note,
//!   answer from the note.
//! - `vanilla_qe`: expand the query (no KG input), dual-retrieve with both
//!   queries, note, answer.
//! - `kg_infused`: spreading activation over the KG, KG-aware query
//!   expansion, dual retrieval, note, fact-augmentation of the note, answer.
//!
//! All modes share the same note and answer prompts, so mode comparisons
//! measure the KG contribution, not prompt drift. A stage failure marks the
//! session with the failing stage instead of aborting batches.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use crate::activation::{
    run_activation, summarize, ActivationConfig, ActivationError, RoundView, SubgraphSummary,
    NO_FACTS_SENTINEL,
};
use crate::gateway::{render, Bindings, ChatRequest, Gateway, GatewayError, TemplateName};
use crate::index::embed::embed_one;
use crate::index::{Corpus, EmbedClient, EmbeddingMatrix, IndexError, Passage, ScoredHit};
use crate::kg::{KgError, KgStore};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("mode requires resource: {0}")]
    MissingResource(&'static str),
    #[error("retrieved passage id {0:?} is not in the corpus")]
    UnknownPassage(String),
    #[error("batch input line {line}: {msg}")]
    BatchParse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which pipeline variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nor,
    VanillaRag,
    VanillaQe,
    KgInfused,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Nor, Mode::VanillaRag, Mode::VanillaQe, Mode::KgInfused];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Nor => "nor",
            Mode::VanillaRag => "vanilla_rag",
            Mode::VanillaQe => "vanilla_qe",
            Mode::KgInfused => "kg_infused",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nor" => Ok(Mode::Nor),
            "vanilla_rag" => Ok(Mode::VanillaRag),
            "vanilla_qe" => Ok(Mode::VanillaQe),
            "kg_infused" => Ok(Mode::KgInfused),
            other => Err(format!(
                "unknown mode {other:?}; expected nor, vanilla_rag, vanilla_qe, or kg_infused"
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How many passages to fetch overall and per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RetrievalPlan {
    pub k_p: usize,
}

impl Default for RetrievalPlan {
    fn default() -> Self {
        RetrievalPlan { k_p: 6 }
    }
}

impl RetrievalPlan {
    /// Per-query budgets: the raw query gets the ceiling half, the expanded
    /// query the floor half.
    pub fn split(&self) -> (usize, usize) {
        (self.k_p.div_ceil(2), self.k_p / 2)
    }
}

/// Pipeline stages, in canonical execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Activation,
    ExpandQuery,
    Retrieve,
    Note,
    Augment,
    Answer,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Activation => "activation",
            Stage::ExpandQuery => "expand_query",
            Stage::Retrieve => "retrieve",
            Stage::Note => "note",
            Stage::Augment => "augment",
            Stage::Answer => "answer",
        }
    }

    /// The stage sequence a mode executes.
    pub fn sequence(mode: Mode) -> &'static [Stage] {
        match mode {
            Mode::Nor => &[Stage::Answer],
            Mode::VanillaRag => &[Stage::Retrieve, Stage::Note, Stage::Answer],
            Mode::VanillaQe => {
                &[Stage::ExpandQuery, Stage::Retrieve, Stage::Note, Stage::Answer]
            }
            Mode::KgInfused => &[
                Stage::Activation,
                Stage::ExpandQuery,
                Stage::Retrieve,
                Stage::Note,
                Stage::Augment,
                Stage::Answer,
            ],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which query produced a retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryTag {
    Original,
    Expanded,
}

/// One retrieved passage with its provenance and score.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RetrievedPassage {
    pub tag: QueryTag,
    pub hit: ScoredHit,
    pub passage: Passage,
}

/// Rendered activation result carried in a session.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ActivationOutcome {
    pub summary: String,
    /// True when activation selected nothing and the summary is the
    /// no-facts sentinel.
    pub is_sentinel: bool,
    pub facts: Vec<String>,
    pub rounds: Vec<RoundView>,
}

/// Where and why a session failed.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

/// Everything one question's run produced, including a stage trace; partial
/// when `error` is set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct QuerySession {
    pub question: String,
    pub mode: Mode,
    pub activation: Option<ActivationOutcome>,
    pub expanded_query: Option<String>,
    pub retrieved: Vec<RetrievedPassage>,
    pub passage_note: Option<String>,
    pub final_note: Option<String>,
    pub answer: Option<String>,
    /// Stages that completed, in execution order.
    pub trace: Vec<Stage>,
    pub error: Option<StageFailure>,
}

impl QuerySession {
    fn new(question: &str, mode: Mode) -> Self {
        QuerySession {
            question: question.to_string(),
            mode,
            activation: None,
            expanded_query: None,
            retrieved: Vec::new(),
            passage_note: None,
            final_note: None,
            answer: None,
            trace: Vec::new(),
            error: None,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Shared read-only resources for running sessions. Optional members are
/// only needed by the modes that use them.
pub struct Resources<'a> {
    pub store: Option<&'a KgStore>,
    pub entity_index: Option<&'a EmbeddingMatrix>,
    pub corpus: Option<&'a Corpus>,
    pub corpus_index: Option<&'a EmbeddingMatrix>,
    pub embedder: &'a dyn EmbedClient,
    pub gateway: &'a dyn Gateway,
}

/// Tuning for a run: activation knobs plus the retrieval budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    pub activation: ActivationConfig,
    pub plan: RetrievalPlan,
}

/// First non-empty line of a model reply, trimmed; empty replies give "".
fn first_nonempty_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_string()
}

/// Produces the expanded query q'.
///
/// With a real subgraph summary the KG-aware expansion prompt is used; with
/// the no-facts sentinel it degrades to the KG-free expansion prompt. The
/// reply's first non-empty line is the query.
pub fn expand_query(
    question: &str,
    summary: &SubgraphSummary,
    gateway: &dyn Gateway,
) -> Result<String, PipelineError> {
    let (template, prompt) = if summary.is_empty() {
        let mut b = Bindings::new();
        b.insert("question", question);
        (TemplateName::QeVanilla, render(TemplateName::QeVanilla, &b)?)
    } else {
        let mut b = Bindings::new();
        b.insert("question", question);
        b.insert("triples_summary", &summary.text);
        (TemplateName::QeKg, render(TemplateName::QeKg, &b)?)
    };
    let reply = gateway.chat(&ChatRequest::new(template, prompt))?;
    Ok(first_nonempty_line(&reply.text))
}

fn hits_to_passages(
    hits: Vec<ScoredHit>,
    tag: QueryTag,
    corpus: &Corpus,
) -> Result<Vec<RetrievedPassage>, PipelineError> {
    hits.into_iter()
        .map(|hit| {
            let passage = corpus
                .get(&hit.id)
                .cloned()
                .ok_or_else(|| PipelineError::UnknownPassage(hit.id.clone()))?;
            Ok(RetrievedPassage { tag, hit, passage })
        })
        .collect()
}

/// Retrieves for both queries and merges by passage id.
///
/// The raw query contributes its hits first (by rank); expanded-query hits
/// follow, skipping ids already present. Overlap shrinks the result — no
/// backfill — so the output holds at most `k_p` passages.
pub fn dual_retrieve(
    question: &str,
    expanded: &str,
    plan: &RetrievalPlan,
    corpus_index: &EmbeddingMatrix,
    corpus: &Corpus,
    embedder: &dyn EmbedClient,
) -> Result<Vec<RetrievedPassage>, PipelineError> {
    let (k_q, k_x) = plan.split();
    let vectors = embedder.embed(&[question, expanded])?;
    let q_hits = corpus_index.top_k(&vectors[0], k_q)?;
    let x_hits = corpus_index.top_k(&vectors[1], k_x)?;
    let mut merged = hits_to_passages(q_hits, QueryTag::Original, corpus)?;
    let mut seen: HashSet<String> = merged.iter().map(|r| r.hit.id.clone()).collect();
    for r in hits_to_passages(x_hits, QueryTag::Expanded, corpus)? {
        if seen.insert(r.hit.id.clone()) {
            merged.push(r);
        }
    }
    Ok(merged)
}

/// Single-query retrieval of `k_p` passages (the plain RAG path).
pub fn retrieve_single(
    question: &str,
    plan: &RetrievalPlan,
    corpus_index: &EmbeddingMatrix,
    corpus: &Corpus,
    embedder: &dyn EmbedClient,
) -> Result<Vec<RetrievedPassage>, PipelineError> {
    let qvec = embed_one(embedder, question)?;
    let hits = corpus_index.top_k(&qvec, plan.k_p)?;
    hits_to_passages(hits, QueryTag::Original, corpus)
}

/// Renders passages as numbered `Title:`/`Text:` blocks in retrieval order.
pub fn render_passages(passages: &[RetrievedPassage]) -> String {
    passages
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!("Passage {}:\nTitle: {}\nText: {}", i + 1, r.passage.title, r.passage.text)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Condenses the retrieved passages into a query-focused note. Called even
/// with zero passages; the model then reports the lack of evidence.
pub fn build_passage_note(
    question: &str,
    passages: &[RetrievedPassage],
    gateway: &dyn Gateway,
) -> Result<String, PipelineError> {
    let passages_text = render_passages(passages);
    let mut b = Bindings::new();
    b.insert("question", question);
    b.insert("passages", &passages_text);
    let prompt = render(TemplateName::Note, &b)?;
    let reply = gateway.chat(&ChatRequest::new(TemplateName::Note, prompt))?;
    Ok(reply.text.trim().to_string())
}

/// Weaves the subgraph summary's facts into the note.
///
/// A sentinel summary short-circuits — the note passes through with zero
/// model calls — so a failed activation degrades to plain RAG behavior.
pub fn augment_note(
    question: &str,
    note: &str,
    summary: &SubgraphSummary,
    gateway: &dyn Gateway,
) -> Result<String, PipelineError> {
    if summary.is_empty() {
        return Ok(note.to_string());
    }
    let mut b = Bindings::new();
    b.insert("question", question);
    b.insert("passage", note);
    b.insert("triples_summary", &summary.text);
    let prompt = render(TemplateName::Ka, &b)?;
    let reply = gateway.chat(&ChatRequest::new(TemplateName::Ka, prompt))?;
    Ok(reply.text.trim().to_string())
}

/// Final answer generation: question-only prompt for `nor`, note-grounded
/// prompt for every other mode.
pub fn generate_answer(
    question: &str,
    context: Option<&str>,
    gateway: &dyn Gateway,
) -> Result<String, PipelineError> {
    let (template, prompt) = match context {
        None => {
            let mut b = Bindings::new();
            b.insert("question", question);
            (TemplateName::AnswerNor, render(TemplateName::AnswerNor, &b)?)
        }
        Some(ctx) => {
            let mut b = Bindings::new();
            b.insert("question", question);
            b.insert("passages", ctx);
            (TemplateName::AnswerRag, render(TemplateName::AnswerRag, &b)?)
        }
    };
    let reply = gateway.chat(&ChatRequest::new(template, prompt))?;
    Ok(reply.text.trim().to_string())
}

fn need<'a, T: ?Sized>(
    r: Option<&'a T>,
    name: &'static str,
) -> Result<&'a T, PipelineError> {
    r.ok_or(PipelineError::MissingResource(name))
}

fn run_stages(
    session: &mut QuerySession,
    cfg: &PipelineConfig,
    res: &Resources<'_>,
) -> Result<(), (Stage, PipelineError)> {
    let q = session.question.clone();
    let mode = session.mode;
    let fail = |stage: Stage| move |e: PipelineError| (stage, e);

    // The subgraph summary steering expansion and augmentation; comparison
    // modes run with the sentinel (no KG input).
    let mut summary = SubgraphSummary { text: NO_FACTS_SENTINEL.to_string(), source_triples: Vec::new() };

    if mode == Mode::KgInfused {
        let stage = Stage::Activation;
        let store = need(res.store, "kg store").map_err(fail(stage))?;
        let entity_index = need(res.entity_index, "entity index").map_err(fail(stage))?;
        let qvec = embed_one(res.embedder, &q)
            .map_err(|e| (stage, PipelineError::from(e)))?;
        let (memory, s) =
            run_activation(&q, &qvec, store, entity_index, &cfg.activation, res.gateway)
                .map_err(|e| (stage, PipelineError::from(e)))?;
        session.activation = Some(ActivationOutcome {
            summary: s.text.clone(),
            is_sentinel: s.is_empty(),
            facts: memory.g_act().iter().map(|t| store.render_triple(t)).collect(),
            rounds: memory.round_views(store),
        });
        summary = s;
        session.trace.push(stage);
    }

    if matches!(mode, Mode::VanillaQe | Mode::KgInfused) {
        let stage = Stage::ExpandQuery;
        // VanillaQe carries the sentinel summary, so this renders the
        // KG-free expansion prompt for it and the KG-aware one otherwise.
        let expanded = expand_query(&q, &summary, res.gateway).map_err(fail(stage))?;
        session.expanded_query = Some(expanded);
        session.trace.push(stage);
    }

    if mode != Mode::Nor {
        let stage = Stage::Retrieve;
        let corpus = need(res.corpus, "corpus").map_err(fail(stage))?;
        let corpus_index = need(res.corpus_index, "corpus index").map_err(fail(stage))?;
        session.retrieved = match &session.expanded_query {
            Some(expanded) => {
                dual_retrieve(&q, expanded, &cfg.plan, corpus_index, corpus, res.embedder)
                    .map_err(fail(stage))?
            }
            None => retrieve_single(&q, &cfg.plan, corpus_index, corpus, res.embedder)
                .map_err(fail(stage))?,
        };
        session.trace.push(stage);

        let stage = Stage::Note;
        let note = build_passage_note(&q, &session.retrieved, res.gateway).map_err(fail(stage))?;
        session.passage_note = Some(note);
        session.trace.push(stage);
    }

    if mode == Mode::KgInfused {
        let stage = Stage::Augment;
        let note = session.passage_note.as_deref().unwrap_or_default();
        let final_note = augment_note(&q, note, &summary, res.gateway).map_err(fail(stage))?;
        session.final_note = Some(final_note);
        session.trace.push(stage);
    }

    let stage = Stage::Answer;
    let context = match mode {
        Mode::Nor => None,
        Mode::KgInfused => session.final_note.as_deref(),
        _ => session.passage_note.as_deref(),
    };
    let answer = generate_answer(&q, context, res.gateway).map_err(fail(stage))?;
    session.answer = Some(answer);
    session.trace.push(stage);
    Ok(())
}

/// Runs one question through `mode`'s stage sequence. Failures are recorded
/// on the session (with the failing stage) rather than returned, so batch
/// callers keep going.
pub fn run(
    question: &str,
    mode: Mode,
    cfg: &PipelineConfig,
    res: &Resources<'_>,
) -> QuerySession {
    let mut session = QuerySession::new(question, mode);
    if let Err((stage, err)) = run_stages(&mut session, cfg, res) {
        log::warn!("session failed at {stage}: {err}");
        session.error = Some(StageFailure { stage, message: err.to_string() });
    }
    session
}

/// One line of the batch input file.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BatchItem {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// Loads batch input JSONL (`{"id", "question", "answers": [...]}`).
pub fn load_batch(path: &Path) -> Result<Vec<BatchItem>, PipelineError> {
    let file = std::fs::File::open(path)?;
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: BatchItem = serde_json::from_str(&line)
            .map_err(|e| PipelineError::BatchParse { line: i + 1, msg: e.to_string() })?;
        items.push(item);
    }
    Ok(items)
}

/// One batch result: the input id with its session.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SessionRecord {
    pub id: String,
    #[serde(flatten)]
    pub session: QuerySession,
}

/// Runs every item, never stopping on per-session failures.
pub fn run_batch(
    items: &[BatchItem],
    mode: Mode,
    cfg: &PipelineConfig,
    res: &Resources<'_>,
) -> Vec<SessionRecord> {
    items
        .iter()
        .map(|item| SessionRecord {
            id: item.id.clone(),
            session: run(&item.question, mode, cfg, res),
        })
        .collect()
}

/// Re-derives the summary at a shallower round depth and replays expansion
/// onward, for round-depth sweeps. The activation walk itself is not rerun.
pub fn summary_at_depth(
    store: &KgStore,
    question: &str,
    memory: &crate::activation::ActivationMemory,
    depth: usize,
    gateway: &dyn Gateway,
) -> Result<SubgraphSummary, PipelineError> {
    let triples = memory.g_act_at_round(depth);
    Ok(summarize(store, question, &triples, gateway)?)
}

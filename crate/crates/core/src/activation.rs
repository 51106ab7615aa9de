//! LLM-guided spreading activation over the triple store.
//!
//! Starting from seed entities chosen by dense retrieval over entity
//! descriptions, each round offers the frontier's 1-hop triples to the
//! model, keeps only the triples it selects, and activates their tail
//! entities as the next frontier — skipping entities that were already
//! activated, so the walk never revisits. The accumulated subgraph is
//! finally condensed into a natural-language summary for the retrieval
//! and augmentation stages.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::gateway::{
    render, Bindings, ChatRequest, Gateway, GatewayError, TemplateName,
};
use crate::index::{EmbeddingMatrix, IndexError};
use crate::kg::{normalize_name, EntityHandle, KgError, KgStore, Triple};

/// Summary text used when activation finds nothing; downstream stages treat
/// KG input as absent when they see it.
pub const NO_FACTS_SENTINEL: &str = "No relevant facts were found.";

#[derive(Debug, thiserror::Error)]
pub enum ActivationError {
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("entity index id {0:?} is not in the store")]
    UnknownSeedId(String),
    #[error("invalid activation config: {0}")]
    InvalidConfig(String),
}

/// Knobs bounding the activation walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ActivationConfig {
    /// Seed entities taken from dense retrieval.
    pub k_e: usize,
    /// Hard cap on activation rounds.
    pub max_rounds: usize,
    /// Cap on newly activated entities carried to the next round.
    pub max_entities_per_round: usize,
    /// Cap on head triples gathered per frontier entity.
    pub max_triples_per_entity: usize,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig {
            k_e: 3,
            max_rounds: 6,
            max_entities_per_round: 10,
            max_triples_per_entity: 30,
        }
    }
}

impl ActivationConfig {
    pub fn validate(&self) -> Result<(), ActivationError> {
        for (name, v) in [
            ("k_e", self.k_e),
            ("max_rounds", self.max_rounds),
            ("max_entities_per_round", self.max_entities_per_round),
            ("max_triples_per_entity", self.max_triples_per_entity),
        ] {
            if v == 0 {
                return Err(ActivationError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// What one round saw and decided.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub index: usize,
    pub frontier_in: Vec<EntityHandle>,
    pub candidates: Vec<Triple>,
    pub selected: Vec<Triple>,
    pub frontier_out: Vec<EntityHandle>,
}

/// Accumulated activation state: the selected subgraph and the set of
/// entities that have ever been activated. Both grow by set union only;
/// insertion order is kept so prompts and summaries are deterministic.
#[derive(Debug, Default)]
pub struct ActivationMemory {
    g_act: Vec<Triple>,
    g_act_set: HashSet<Triple>,
    e_act: Vec<EntityHandle>,
    e_act_set: HashSet<EntityHandle>,
    pub rounds: Vec<RoundRecord>,
}

impl ActivationMemory {
    pub fn new() -> Self {
        ActivationMemory::default()
    }

    /// Selected triples in first-selection order.
    pub fn g_act(&self) -> &[Triple] {
        &self.g_act
    }

    /// Activated entities in activation order.
    pub fn e_act(&self) -> &[EntityHandle] {
        &self.e_act
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.g_act_set.contains(t)
    }

    pub fn is_activated(&self, e: EntityHandle) -> bool {
        self.e_act_set.contains(&e)
    }

    fn add_triples(&mut self, triples: &[Triple]) {
        for t in triples {
            if self.g_act_set.insert(*t) {
                self.g_act.push(*t);
            }
        }
    }

    fn add_entities(&mut self, entities: &[EntityHandle]) {
        for &e in entities {
            if self.e_act_set.insert(e) {
                self.e_act.push(e);
            }
        }
    }

    /// Subgraph as of the end of round `i` (prefix union of per-round
    /// selections), for round-depth sweeps.
    pub fn g_act_at_round(&self, i: usize) -> Vec<Triple> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for rec in self.rounds.iter().take(i + 1) {
            for t in &rec.selected {
                if seen.insert(*t) {
                    out.push(*t);
                }
            }
        }
        out
    }

    /// Human-readable per-round views: entities as external ids, triples
    /// rendered.
    pub fn round_views(&self, store: &KgStore) -> Vec<RoundView> {
        let ext = |h: &EntityHandle| store.entity(*h).ext_id.clone();
        self.rounds
            .iter()
            .map(|rec| RoundView {
                index: rec.index,
                frontier_in: rec.frontier_in.iter().map(ext).collect(),
                candidates: rec.candidates.iter().map(|t| store.render_triple(t)).collect(),
                selected: rec.selected.iter().map(|t| store.render_triple(t)).collect(),
                frontier_out: rec.frontier_out.iter().map(ext).collect(),
            })
            .collect()
    }

    /// One JSON line per round, for trace files and golden tests.
    pub fn export_trace(&self, store: &KgStore) -> String {
        let mut out = String::new();
        for view in self.round_views(store) {
            out.push_str(&serde_json::to_string(&view).expect("trace serialization"));
            out.push('\n');
        }
        out
    }
}

/// Serializable rendering of one [`RoundRecord`]: entities as external ids,
/// triples in their `<head | relation | tail>` form.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RoundView {
    pub index: usize,
    pub frontier_in: Vec<String>,
    pub candidates: Vec<String>,
    pub selected: Vec<String>,
    pub frontier_out: Vec<String>,
}

/// The accumulated subgraph condensed to text.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphSummary {
    pub text: String,
    pub source_triples: Vec<Triple>,
}

impl SubgraphSummary {
    /// True when activation found nothing and downstream stages should run
    /// without KG input.
    pub fn is_empty(&self) -> bool {
        self.source_triples.is_empty()
    }
}

/// Picks the seed entities: ids of the top `k_e` description vectors by
/// inner product, resolved to store handles.
pub fn seed_entities(
    store: &KgStore,
    entity_index: &EmbeddingMatrix,
    qvec: &[f32],
    k_e: usize,
) -> Result<Vec<EntityHandle>, ActivationError> {
    let hits = entity_index.top_k(qvec, k_e)?;
    hits.into_iter()
        .map(|hit| {
            store
                .entity_handle(&hit.id)
                .ok_or(ActivationError::UnknownSeedId(hit.id))
        })
        .collect()
}

fn span_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([^<>]*)>").unwrap())
}

fn render_triples(store: &KgStore, triples: &[Triple]) -> String {
    triples.iter().map(|t| store.render_triple(t)).collect::<Vec<_>>().join("\n")
}

/// Asks the model which candidates to keep and maps its reply back onto the
/// candidate list.
///
/// Round 0 uses the plain selection prompt; later rounds use the update
/// prompt carrying everything selected so far. Bracketed spans in the reply
/// are matched against candidate renderings case-insensitively with
/// collapsed whitespace; anything else — hallucinated triples, duplicates,
/// prompt echoes — is dropped. The result keeps candidate order.
pub fn select_triples(
    store: &KgStore,
    question: &str,
    candidates: &[Triple],
    memory: &ActivationMemory,
    gateway: &dyn Gateway,
) -> Result<Vec<Triple>, ActivationError> {
    let candidates_text = render_triples(store, candidates);
    let round = memory.rounds.len();
    let prompt = if round == 0 {
        let mut b = Bindings::new();
        b.insert("question", question);
        b.insert("triples", &candidates_text);
        render(TemplateName::TripleSelect, &b)?
    } else {
        let previous_text = render_triples(store, memory.g_act());
        let mut b = Bindings::new();
        b.insert("question", question);
        b.insert("previous_selected_triples", &previous_text);
        b.insert("new_retrieved_triples", &candidates_text);
        render(TemplateName::TripleUpdate, &b)?
    };
    let template = if round == 0 { TemplateName::TripleSelect } else { TemplateName::TripleUpdate };
    let reply = gateway.chat(&ChatRequest::new(template, prompt))?;

    // Map normalized candidate renderings (sans brackets) to positions.
    let mut by_norm: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (i, t) in candidates.iter().enumerate() {
        let rendered = store.render_triple(t);
        let inner = &rendered[1..rendered.len() - 1];
        by_norm.entry(normalize_name(inner)).or_insert(i);
    }
    let mut keep = vec![false; candidates.len()];
    for cap in span_re().captures_iter(&reply.text) {
        if let Some(&i) = by_norm.get(&normalize_name(&cap[1])) {
            keep[i] = true;
        }
    }
    Ok(candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, t)| *t)
        .collect())
}

/// Executes one activation round from `frontier` and folds the result into
/// `memory`.
pub fn activation_round(
    store: &KgStore,
    memory: &mut ActivationMemory,
    frontier: &[EntityHandle],
    cfg: &ActivationConfig,
    gateway: &dyn Gateway,
    question: &str,
) -> Result<RoundRecord, ActivationError> {
    // Frontier entities were filtered against the memory when produced;
    // re-check so a caller-supplied frontier cannot reactivate.
    let frontier: Vec<EntityHandle> =
        frontier.iter().copied().filter(|&e| !memory.is_activated(e)).collect();

    let mut candidates: Vec<Triple> = Vec::new();
    for &e in &frontier {
        for t in store.neighbors(e, cfg.max_triples_per_entity)? {
            if !memory.contains_triple(t) {
                candidates.push(*t);
            }
        }
    }

    let selected = if candidates.is_empty() {
        Vec::new()
    } else {
        select_triples(store, question, &candidates, memory, gateway)?
    };

    memory.add_triples(&selected);
    memory.add_entities(&frontier);

    // Next frontier: tails of the selection, first occurrence in selection
    // order, minus everything already activated (which now includes this
    // round's frontier), capped.
    let mut frontier_out: Vec<EntityHandle> = Vec::new();
    let mut seen: HashSet<EntityHandle> = HashSet::new();
    for t in &selected {
        if frontier_out.len() == cfg.max_entities_per_round {
            break;
        }
        if !memory.is_activated(t.tail) && seen.insert(t.tail) {
            frontier_out.push(t.tail);
        }
    }

    let record = RoundRecord {
        index: memory.rounds.len(),
        frontier_in: frontier,
        candidates,
        selected,
        frontier_out,
    };
    memory.rounds.push(record.clone());
    Ok(record)
}

/// Condenses `triples` into prose via the summary prompt, or returns the
/// sentinel (without any model call) when there is nothing to summarize.
pub fn summarize(
    store: &KgStore,
    question: &str,
    triples: &[Triple],
    gateway: &dyn Gateway,
) -> Result<SubgraphSummary, ActivationError> {
    if triples.is_empty() {
        return Ok(SubgraphSummary {
            text: NO_FACTS_SENTINEL.to_string(),
            source_triples: Vec::new(),
        });
    }
    let triples_text = render_triples(store, triples);
    let mut b = Bindings::new();
    b.insert("question", question);
    b.insert("selected_triples", &triples_text);
    let prompt = render(TemplateName::TripleSummary, &b)?;
    let reply = gateway.chat(&ChatRequest::new(TemplateName::TripleSummary, prompt))?;
    Ok(SubgraphSummary { text: reply.text, source_triples: triples.to_vec() })
}

/// Full walk: seed, iterate rounds until the frontier empties or
/// `max_rounds` is hit, then summarize the accumulated subgraph.
pub fn run_activation(
    question: &str,
    qvec: &[f32],
    store: &KgStore,
    entity_index: &EmbeddingMatrix,
    cfg: &ActivationConfig,
    gateway: &dyn Gateway,
) -> Result<(ActivationMemory, SubgraphSummary), ActivationError> {
    cfg.validate()?;
    let mut memory = ActivationMemory::new();
    let mut frontier = seed_entities(store, entity_index, qvec, cfg.k_e)?;
    for _ in 0..cfg.max_rounds {
        if frontier.is_empty() {
            break;
        }
        let record = activation_round(store, &mut memory, &frontier, cfg, gateway, question)?;
        frontier = record.frontier_out;
    }
    let summary = summarize(store, question, memory.g_act(), gateway)?;
    Ok((memory, summary))
}

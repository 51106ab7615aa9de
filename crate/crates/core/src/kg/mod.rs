//! Immutable triple knowledge-graph store.
//!
//! The store is built in two phases: [`load::load_raw`] parses the TSV dump
//! files into a [`RawKg`], then [`filter_complete`] enforces the two
//! completeness constraints — every retained entity has a non-empty textual
//! description and heads at least one triple — by cascading removal to a
//! fixed point. The result is an interned, head-adjacency-indexed store that
//! is immutable afterwards and safe to share across query threads.

pub mod load;
pub mod snapshot;

use std::collections::HashMap;
use std::path::PathBuf;

pub use load::{load_raw, RawKg};

/// Dense handle for an interned entity; contiguous `0..entity_count`.
pub type EntityHandle = u32;
/// Dense handle for an interned relation; contiguous `0..relation_count`.
pub type RelationHandle = u32;

/// A retained entity: external id, surface forms (first is canonical), and a
/// non-empty description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub ext_id: String,
    pub names: Vec<String>,
    pub description: String,
}

impl Entity {
    pub fn canonical_name(&self) -> &str {
        &self.names[0]
    }
}

/// A retained relation: external id and surface forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub ext_id: String,
    pub names: Vec<String>,
}

impl Relation {
    pub fn canonical_name(&self) -> &str {
        &self.names[0]
    }
}

/// One directed edge `head --relation--> tail`, all interned handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityHandle,
    pub relation: RelationHandle,
    pub tail: EntityHandle,
}

/// Before/after record sizes from completeness filtering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FilterStats {
    pub entities_in: u64,
    pub entities_out: u64,
    pub relations_in: u64,
    pub relations_out: u64,
    pub triples_in: u64,
    pub triples_out: u64,
}

impl FilterStats {
    /// Fraction of records removed, in `[0, 1]`; 0 when nothing came in.
    fn removed(inn: u64, out: u64) -> f64 {
        if inn == 0 {
            0.0
        } else {
            (inn - out) as f64 / inn as f64
        }
    }

    pub fn entity_removal_fraction(&self) -> f64 {
        Self::removed(self.entities_in, self.entities_out)
    }

    pub fn relation_removal_fraction(&self) -> f64 {
        Self::removed(self.relations_in, self.relations_out)
    }

    pub fn triple_removal_fraction(&self) -> f64 {
        Self::removed(self.triples_in, self.triples_out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("KG empty after filtering")]
    EmptyAfterFilter,
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("unknown relation: {0}")]
    UnknownRelation(String),
    #[error("triple not present in store: {0}")]
    UnknownTriple(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// Filtered, interned triple store with head adjacency.
///
/// Triples are grouped by head entity; within one head they keep their load
/// order, so neighbor lists are deterministic across runs.
#[derive(Debug)]
pub struct KgStore {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: Vec<Triple>,
    /// `adjacency_offsets[e]..adjacency_offsets[e+1]` spans `e`'s triples.
    adjacency_offsets: Vec<u32>,
    entity_by_ext: HashMap<String, EntityHandle>,
    entity_by_name: HashMap<String, EntityHandle>,
    relation_by_name: HashMap<String, RelationHandle>,
    pub stats: FilterStats,
}

/// Lookup key for name-based resolution: lowercase, whitespace collapsed.
pub(crate) fn normalize_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl KgStore {
    pub(crate) fn from_parts(
        entities: Vec<Entity>,
        relations: Vec<Relation>,
        triples: Vec<Triple>,
        stats: FilterStats,
    ) -> Self {
        let mut adjacency_offsets = vec![0u32; entities.len() + 1];
        for t in &triples {
            adjacency_offsets[t.head as usize + 1] += 1;
        }
        for i in 1..adjacency_offsets.len() {
            adjacency_offsets[i] += adjacency_offsets[i - 1];
        }
        let mut entity_by_ext = HashMap::with_capacity(entities.len());
        let mut entity_by_name = HashMap::with_capacity(entities.len());
        for (h, e) in entities.iter().enumerate() {
            entity_by_ext.insert(e.ext_id.clone(), h as EntityHandle);
            // First entity wins on canonical-name collisions; keeps name
            // resolution deterministic.
            entity_by_name
                .entry(normalize_name(e.canonical_name()))
                .or_insert(h as EntityHandle);
        }
        let mut relation_by_name = HashMap::with_capacity(relations.len());
        for (h, r) in relations.iter().enumerate() {
            relation_by_name
                .entry(normalize_name(r.canonical_name()))
                .or_insert(h as RelationHandle);
        }
        KgStore {
            entities,
            relations,
            triples,
            adjacency_offsets,
            entity_by_ext,
            entity_by_name,
            relation_by_name,
            stats,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entity(&self, h: EntityHandle) -> &Entity {
        &self.entities[h as usize]
    }

    pub fn relation(&self, h: RelationHandle) -> &Relation {
        &self.relations[h as usize]
    }

    pub fn entities(&self) -> impl Iterator<Item = (EntityHandle, &Entity)> {
        self.entities.iter().enumerate().map(|(i, e)| (i as EntityHandle, e))
    }

    pub fn relations(&self) -> impl Iterator<Item = (RelationHandle, &Relation)> {
        self.relations.iter().enumerate().map(|(i, r)| (i as RelationHandle, r))
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Resolves an external id (e.g. a Wikidata Q-id) to its handle.
    pub fn entity_handle(&self, ext_id: &str) -> Option<EntityHandle> {
        self.entity_by_ext.get(ext_id).copied()
    }

    /// Resolves a surface form to the first entity whose canonical name
    /// normalizes to it.
    pub fn entity_by_name(&self, name: &str) -> Option<EntityHandle> {
        self.entity_by_name.get(&normalize_name(name)).copied()
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationHandle> {
        self.relation_by_name.get(&normalize_name(name)).copied()
    }

    /// Up to `cap` triples headed by `e`, in load order.
    pub fn neighbors(&self, e: EntityHandle, cap: usize) -> Result<&[Triple], KgError> {
        if (e as usize) >= self.entities.len() {
            return Err(KgError::UnknownEntity(format!("handle {e}")));
        }
        let start = self.adjacency_offsets[e as usize] as usize;
        let end = self.adjacency_offsets[e as usize + 1] as usize;
        let n = (end - start).min(cap);
        Ok(&self.triples[start..start + n])
    }

    /// Head-triple degree of `e`.
    pub fn degree(&self, e: EntityHandle) -> usize {
        let start = self.adjacency_offsets[e as usize] as usize;
        let end = self.adjacency_offsets[e as usize + 1] as usize;
        end - start
    }

    /// Renders a triple as `<head | relation | tail>` using canonical names.
    /// Any `|` inside a name becomes `/` so the delimiters stay unambiguous.
    pub fn render_triple(&self, t: &Triple) -> String {
        let esc = |s: &str| s.replace('|', "/");
        format!(
            "<{} | {} | {}>",
            esc(self.entity(t.head).canonical_name()),
            esc(self.relation(t.relation).canonical_name()),
            esc(self.entity(t.tail).canonical_name()),
        )
    }

    /// Parses a `<head | relation | tail>` rendering back to store handles.
    ///
    /// Resolution is by normalized canonical name; the triple must actually
    /// exist in the store.
    pub fn parse_triple(&self, text: &str) -> Result<Triple, KgError> {
        let inner = text.trim();
        let inner = inner.strip_prefix('<').unwrap_or(inner);
        let inner = inner.strip_suffix('>').unwrap_or(inner);
        let parts: Vec<&str> = inner.split('|').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(KgError::UnknownTriple(format!(
                "expected 3 pipe-delimited fields, got {}: {text}",
                parts.len()
            )));
        }
        let head = self
            .entity_by_name(parts[0])
            .ok_or_else(|| KgError::UnknownEntity(parts[0].to_string()))?;
        let relation = self
            .relation_by_name(parts[1])
            .ok_or_else(|| KgError::UnknownRelation(parts[1].to_string()))?;
        let tail = self
            .entity_by_name(parts[2])
            .ok_or_else(|| KgError::UnknownEntity(parts[2].to_string()))?;
        let t = Triple { head, relation, tail };
        if self.neighbors(head, usize::MAX)?.contains(&t) {
            Ok(t)
        } else {
            Err(KgError::UnknownTriple(text.to_string()))
        }
    }
}

/// Enforces both completeness constraints by cascading removal.
///
/// An entity survives only if it has a non-empty description and still heads
/// at least one triple; a triple survives only if its head and tail both
/// survive. Removing a triple can strip another entity of its last head
/// triple, so the removal runs to a fixed point (worklist, O(V+E)).
/// Relations are kept exactly when some surviving triple uses them.
/// Duplicate triples collapse to their first occurrence.
pub fn filter_complete(raw: RawKg) -> Result<KgStore, KgError> {
    let stats_entities_in = raw.entities.len() as u64;
    let stats_relations_in = raw.relations.len() as u64;
    let stats_triples_in = raw.triples.len() as u64;

    // Dedupe triples, keeping first occurrence order.
    let mut seen = std::collections::HashSet::with_capacity(raw.triples.len());
    let mut triples: Vec<[u32; 3]> = Vec::with_capacity(raw.triples.len());
    for t in &raw.triples {
        if seen.insert(*t) {
            triples.push(*t);
        }
    }
    drop(seen);

    let n = raw.entities.len();
    let mut entity_alive: Vec<bool> = raw
        .entities
        .iter()
        .map(|e| e.description.as_deref().is_some_and(|d| !d.trim().is_empty()))
        .collect();
    let mut triple_alive = vec![true; triples.len()];

    // Incidence lists so one pass of cascading stays linear.
    let mut by_head: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut by_tail: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut head_deg = vec![0u32; n];
    for (i, t) in triples.iter().enumerate() {
        by_head[t[0] as usize].push(i as u32);
        by_tail[t[2] as usize].push(i as u32);
        head_deg[t[0] as usize] += 1;
    }

    let mut queue: std::collections::VecDeque<u32> = (0..n as u32)
        .filter(|&e| !entity_alive[e as usize] || head_deg[e as usize] == 0)
        .collect();
    let mut queued = vec![false; n];
    for &e in &queue {
        queued[e as usize] = true;
    }

    while let Some(e) = queue.pop_front() {
        entity_alive[e as usize] = false;
        // Kill triples touching e; heads losing their last triple cascade.
        for list in [&by_head[e as usize], &by_tail[e as usize]] {
            for &ti in list {
                if !triple_alive[ti as usize] {
                    continue;
                }
                triple_alive[ti as usize] = false;
                let h = triples[ti as usize][0] as usize;
                head_deg[h] -= 1;
                if head_deg[h] == 0 && entity_alive[h] && !queued[h] {
                    queued[h] = true;
                    queue.push_back(h as u32);
                }
            }
        }
    }

    // Re-intern survivors to dense handles, preserving load order.
    let mut entity_map = vec![u32::MAX; n];
    let mut entities = Vec::new();
    for (i, e) in raw.entities.into_iter().enumerate() {
        if entity_alive[i] {
            entity_map[i] = entities.len() as u32;
            entities.push(Entity {
                ext_id: e.ext_id,
                names: e.names,
                description: e.description.unwrap_or_default(),
            });
        }
    }
    if entities.is_empty() {
        return Err(KgError::EmptyAfterFilter);
    }

    let mut relation_used = vec![false; raw.relations.len()];
    for (i, t) in triples.iter().enumerate() {
        if triple_alive[i] {
            relation_used[t[1] as usize] = true;
        }
    }
    let mut relation_map = vec![u32::MAX; raw.relations.len()];
    let mut relations = Vec::new();
    for (i, r) in raw.relations.into_iter().enumerate() {
        if relation_used[i] {
            relation_map[i] = relations.len() as u32;
            relations.push(Relation { ext_id: r.ext_id, names: r.names });
        }
    }

    let mut kept: Vec<Triple> = triples
        .iter()
        .enumerate()
        .filter(|(i, _)| triple_alive[*i])
        .map(|(_, t)| Triple {
            head: entity_map[t[0] as usize],
            relation: relation_map[t[1] as usize],
            tail: entity_map[t[2] as usize],
        })
        .collect();
    // Group by head for contiguous adjacency; stable sort keeps load order
    // within each head.
    kept.sort_by_key(|t| t.head);

    let stats = FilterStats {
        entities_in: stats_entities_in,
        entities_out: entities.len() as u64,
        relations_in: stats_relations_in,
        relations_out: relations.len() as u64,
        triples_in: stats_triples_in,
        triples_out: kept.len() as u64,
    };
    Ok(KgStore::from_parts(entities, relations, kept, stats))
}

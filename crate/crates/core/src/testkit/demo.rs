//! A self-contained miniature world for end-to-end offline runs: a small
//! aerospace-history KG, a matching passage corpus, hand-placed embeddings,
//! and a scripted model dialogue that walks the full KG-infused pipeline to
//! a known answer.
//!
//! The question takes two hops to answer — "Which company followed the
//! company that made AAM-N-4 Oriole?" needs the missile's manufacturer and
//! then that company's successor — so it genuinely exercises iterative
//! activation. Embeddings are laid out by hand in a 4-dim space, which
//! pins seed order and retrieval ranks exactly.

use crate::activation::ActivationConfig;
use crate::gateway::mock::Transcript;
use crate::gateway::{ChatRequest, Gateway};
use crate::index::{Corpus, EmbeddingMatrix, MapEmbedder, Passage};
use crate::kg::load::{RawEntity, RawRelation};
use crate::kg::{filter_complete, KgStore, RawKg};
use crate::pipeline::{Mode, PipelineConfig, QuerySession, Resources, RetrievalPlan};
use crate::testkit::QueueGateway;

/// Entity table: (source id, names, description, 4-dim embedding).
///
/// The embedding's first axis is "question-ness": the question vector is
/// `[1,0,0,0]`, so seed order is the first column, descending.
const ENTITIES: &[(&str, &[&str], &str, [f32; 4])] = &[
    (
        "E1",
        &["RTV-N-16 Oriole", "AAM-N-4 Oriole"],
        "experimental air-to-air missile developed for the United States Navy",
        [0.9, 0.0, 0.0, 0.0],
    ),
    (
        "E2",
        &["Martin Company", "Glenn L. Martin Company"],
        "American aircraft and aerospace manufacturer founded by Glenn L. Martin",
        [0.8, 0.1, 0.0, 0.0],
    ),
    (
        "E3",
        &["Martin Marietta", "Martin Marietta Corporation"],
        "American aerospace and chemicals corporation formed in 1961",
        [0.2, 0.6, 0.0, 0.0],
    ),
    (
        "E4",
        &["Lockheed Martin"],
        "American aerospace, defense and security corporation",
        [0.1, 0.5, 0.0, 0.0],
    ),
    (
        "E5",
        &["Air-to-air missiles"],
        "missiles fired from an aircraft to destroy another aircraft",
        [0.7, 0.0, 0.1, 0.0],
    ),
    (
        "E6",
        &["Missiles"],
        "guided self-propelled flying weapons",
        [0.05, 0.0, 0.2, 0.0],
    ),
    (
        "E7",
        &["United States Navy"],
        "maritime service branch of the United States Armed Forces",
        [0.0, 0.0, 0.0, 0.3],
    ),
];

const RELATIONS: &[(&str, &str)] = &[
    ("R1", "manufacturer"),
    ("R2", "instance of"),
    ("R3", "operator"),
    ("R4", "followed by"),
    ("R5", "replaces"),
    ("R6", "subclass of"),
    ("R7", "has subclass"),
    ("R8", "operator of"),
];

/// `[head, relation, tail]` as indices into the tables above. Every entity
/// heads at least one triple, so the completeness filter keeps the whole
/// graph.
const TRIPLES: &[[u32; 3]] = &[
    [0, 0, 1], // RTV-N-16 Oriole | manufacturer | Martin Company
    [0, 1, 4], // RTV-N-16 Oriole | instance of | Air-to-air missiles
    [0, 2, 6], // RTV-N-16 Oriole | operator | United States Navy
    [1, 3, 2], // Martin Company | followed by | Martin Marietta
    [2, 4, 1], // Martin Marietta | replaces | Martin Company
    [2, 3, 3], // Martin Marietta | followed by | Lockheed Martin
    [3, 4, 2], // Lockheed Martin | replaces | Martin Marietta
    [4, 5, 5], // Air-to-air missiles | subclass of | Missiles
    [5, 6, 4], // Missiles | has subclass | Air-to-air missiles
    [6, 7, 0], // United States Navy | operator of | RTV-N-16 Oriole
];

/// Passage table: (id, title, text, 4-dim embedding). The second embedding
/// axis is similarity to the expanded query `[0,1,0,0]`.
const PASSAGES: &[(&str, &str, &str, [f32; 4])] = &[
    (
        "p1",
        "AAM-N-4 Oriole",
        "The AAM-N-4 Oriole was an early American air-to-air missile developed by the \
         Glenn L. Martin Company for the United States Navy.",
        [0.9, 0.1, 0.0, 0.0],
    ),
    (
        "p2",
        "Glenn L. Martin Company",
        "The Glenn L. Martin Company was an American aircraft and aerospace manufacturer \
         founded by aviation pioneer Glenn Luther Martin in 1912.",
        [0.8, 0.3, 0.0, 0.0],
    ),
    (
        "p3",
        "Martin Marietta",
        "Martin Marietta Corporation was formed in 1961 by the merger of the Glenn L. \
         Martin Company and American-Marietta Corporation.",
        [0.3, 0.9, 0.0, 0.0],
    ),
    (
        "p4",
        "Lockheed Martin",
        "Lockheed Martin was formed by the merger of Lockheed Corporation with Martin \
         Marietta in March 1995.",
        [0.1, 0.7, 0.0, 0.0],
    ),
    (
        "p5",
        "Air-to-air missile",
        "An air-to-air missile is fired from an aircraft for the purpose of destroying \
         another aircraft.",
        [0.4, 0.0, 0.0, 0.0],
    ),
    (
        "p6",
        "United States Navy",
        "The United States Navy is the maritime service branch of the United States \
         Armed Forces.",
        [0.2, 0.05, 0.0, 0.0],
    ),
];

pub const QUESTION: &str = "Which company followed the company that made AAM-N-4 Oriole?";
pub const EXPECTED_ANSWER: &str = "Martin Marietta Corporation.";
pub const GOLD_ANSWER: &str = "Martin Marietta";
const EXPANDED_QUERY: &str = "Martin Company successor Martin Marietta";

/// The scripted replies for one depth-2 KG-infused session, in call order:
/// two triple selections, the subgraph summary, query expansion, the
/// passage note, the augmented note, and the answer — seven calls.
fn replies() -> Vec<String> {
    vec![
        "<RTV-N-16 Oriole | manufacturer | Martin Company>\n\
         <RTV-N-16 Oriole | instance of | Air-to-air missiles>\n\
         <Martin Company | followed by | Martin Marietta>"
            .to_string(),
        "No additional triples are needed to answer the question.".to_string(),
        "The RTV-N-16 Oriole, also known as AAM-N-4 Oriole, was an air-to-air missile \
         manufactured by the Martin Company; the Martin Company was followed by Martin \
         Marietta."
            .to_string(),
        EXPANDED_QUERY.to_string(),
        "The AAM-N-4 Oriole was made by the Glenn L. Martin Company. Martin Marietta \
         Corporation was formed in 1961 by the merger of the Glenn L. Martin Company and \
         American-Marietta Corporation."
            .to_string(),
        "The AAM-N-4 Oriole was made by the Glenn L. Martin Company, which was followed \
         by Martin Marietta. Martin Marietta Corporation was formed in 1961 by the merger \
         of the Glenn L. Martin Company and American-Marietta Corporation."
            .to_string(),
        EXPECTED_ANSWER.to_string(),
    ]
}

/// Everything needed to run the demo end to end.
pub struct DemoWorld {
    pub store: KgStore,
    pub corpus: Corpus,
    pub entity_index: EmbeddingMatrix,
    pub corpus_index: EmbeddingMatrix,
    pub embedder: MapEmbedder,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub expected_answer: String,
    /// Renders of the three triples the scripted dialogue selects.
    pub expected_facts: Vec<String>,
    pub replies: Vec<String>,
    pub config: PipelineConfig,
}

/// The raw dump as a [`RawKg`], identical to what parsing
/// [`tsv_files`] yields.
pub fn raw_kg() -> RawKg {
    RawKg {
        entities: ENTITIES
            .iter()
            .map(|(ext_id, names, description, _)| RawEntity {
                ext_id: ext_id.to_string(),
                names: names.iter().map(|n| n.to_string()).collect(),
                description: Some(description.to_string()),
            })
            .collect(),
        relations: RELATIONS
            .iter()
            .map(|(ext_id, name)| RawRelation {
                ext_id: ext_id.to_string(),
                names: vec![name.to_string()],
            })
            .collect(),
        triples: TRIPLES.to_vec(),
        dangling_dropped: 0,
    }
}

/// The same data in dump-file form: (triples, entities, relations,
/// descriptions) TSV contents for `load_raw`.
pub fn tsv_files() -> (String, String, String, String) {
    let mut triples = String::new();
    for [h, r, t] in TRIPLES {
        triples.push_str(&format!(
            "{}\t{}\t{}\n",
            ENTITIES[*h as usize].0, RELATIONS[*r as usize].0, ENTITIES[*t as usize].0
        ));
    }
    let mut entities = String::new();
    let mut descriptions = String::new();
    for (ext_id, names, description, _) in ENTITIES {
        entities.push_str(ext_id);
        for name in *names {
            entities.push('\t');
            entities.push_str(name);
        }
        entities.push('\n');
        descriptions.push_str(&format!("{ext_id}\t{description}\n"));
    }
    let mut relations = String::new();
    for (ext_id, name) in RELATIONS {
        relations.push_str(&format!("{ext_id}\t{name}\n"));
    }
    (triples, entities, relations, descriptions)
}

/// The corpus in JSONL form.
pub fn corpus_jsonl() -> String {
    let mut out = String::new();
    for (id, title, text, _) in PASSAGES {
        let p = Passage { id: id.to_string(), title: title.to_string(), text: text.to_string() };
        out.push_str(&serde_json::to_string(&p).unwrap());
        out.push('\n');
    }
    out
}

/// The query-embedding map in JSON form (question and expanded query).
pub fn embed_map_json() -> String {
    serde_json::json!({
        QUESTION: [1.0, 0.0, 0.0, 0.0],
        EXPANDED_QUERY: [0.0, 1.0, 0.0, 0.0],
    })
    .to_string()
}

/// A one-item batch file asking the demo question.
pub fn batch_jsonl() -> String {
    serde_json::json!({
        "id": "demo-1",
        "question": QUESTION,
        "answers": [GOLD_ANSWER],
    })
    .to_string()
        + "\n"
}

impl DemoWorld {
    pub fn new() -> Self {
        let store = filter_complete(raw_kg()).expect("demo KG survives filtering");
        assert_eq!(store.entity_count(), ENTITIES.len(), "demo KG must filter cleanly");

        let corpus = Corpus::new(
            PASSAGES
                .iter()
                .map(|(id, title, text, _)| Passage {
                    id: id.to_string(),
                    title: title.to_string(),
                    text: text.to_string(),
                })
                .collect(),
        )
        .unwrap();

        let entity_index = EmbeddingMatrix::new(
            4,
            ENTITIES.iter().map(|(ext_id, ..)| ext_id.to_string()).collect(),
            ENTITIES.iter().map(|(.., v)| v.to_vec()).collect(),
        )
        .unwrap();
        let corpus_index = EmbeddingMatrix::new(
            4,
            PASSAGES.iter().map(|(id, ..)| id.to_string()).collect(),
            PASSAGES.iter().map(|(.., v)| v.to_vec()).collect(),
        )
        .unwrap();

        let mut embedder = MapEmbedder::new();
        embedder.insert(QUESTION, vec![1.0, 0.0, 0.0, 0.0]);
        embedder.insert(EXPANDED_QUERY, vec![0.0, 1.0, 0.0, 0.0]);

        let expected_facts = vec![
            "<RTV-N-16 Oriole | manufacturer | Martin Company>".to_string(),
            "<RTV-N-16 Oriole | instance of | Air-to-air missiles>".to_string(),
            "<Martin Company | followed by | Martin Marietta>".to_string(),
        ];

        DemoWorld {
            store,
            corpus,
            entity_index,
            corpus_index,
            embedder,
            question: QUESTION.to_string(),
            gold_answers: vec![GOLD_ANSWER.to_string()],
            expected_answer: EXPECTED_ANSWER.to_string(),
            expected_facts,
            replies: replies(),
            config: PipelineConfig {
                activation: ActivationConfig { max_rounds: 2, ..ActivationConfig::default() },
                plan: RetrievalPlan::default(),
            },
        }
    }

    pub fn resources<'a>(&'a self, gateway: &'a dyn Gateway) -> Resources<'a> {
        Resources {
            store: Some(&self.store),
            entity_index: Some(&self.entity_index),
            corpus: Some(&self.corpus),
            corpus_index: Some(&self.corpus_index),
            embedder: &self.embedder,
            gateway,
        }
    }

    /// Runs the scripted dialogue once against a reply queue and keys every
    /// (prompt, reply) pair into a transcript. Replaying that transcript
    /// reproduces the session exactly; a pipeline change that alters any
    /// prompt or the call order surfaces as a missing-transcript-entry
    /// error.
    pub fn record_transcript(&self) -> Transcript {
        let gateway = QueueGateway::new(self.replies.clone());
        let session = self.run_once(&gateway);
        assert!(session.error.is_none(), "demo recording failed: {:?}", session.error);
        let calls = gateway.calls();
        assert_eq!(calls.len(), self.replies.len(), "demo dialogue is written for 7 calls");
        let mut transcript = Transcript::new();
        for (call, reply) in calls.iter().zip(&self.replies) {
            let req = ChatRequest::new(call.template, call.prompt.clone()).with_params(call.params);
            transcript.insert(&req, reply);
        }
        transcript
    }

    /// One KG-infused run of the demo question against `gateway`.
    pub fn run_once(&self, gateway: &dyn Gateway) -> QuerySession {
        crate::pipeline::run(&self.question, Mode::KgInfused, &self.config, &self.resources(gateway))
    }
}

impl Default for DemoWorld {
    fn default() -> Self {
        DemoWorld::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::MockGateway;

    #[test]
    fn scripted_dialogue_reaches_the_expected_answer() {
        let world = DemoWorld::new();
        let gateway = QueueGateway::new(world.replies.clone());
        let session = world.run_once(&gateway);
        assert!(session.error.is_none(), "{:?}", session.error);
        assert_eq!(session.answer.as_deref(), Some(EXPECTED_ANSWER));
        let activation = session.activation.as_ref().unwrap();
        assert_eq!(activation.facts, world.expected_facts);
        assert!(!activation.is_sentinel);
        assert_eq!(activation.rounds.len(), 2);
        // Depth 2 selects nothing new in round 1.
        assert!(activation.rounds[1].selected.is_empty());
        assert_eq!(gateway.calls().len(), 7);
    }

    #[test]
    fn retrieval_unions_five_passages() {
        let world = DemoWorld::new();
        let gateway = QueueGateway::new(world.replies.clone());
        let session = world.run_once(&gateway);
        let ids: Vec<&str> = session.retrieved.iter().map(|r| r.hit.id.as_str()).collect();
        // Raw-query hits by rank, then unseen expanded-query hits: p2 is
        // shared and keeps its raw-query slot.
        assert_eq!(ids, ["p1", "p2", "p5", "p3", "p4"]);
    }

    #[test]
    fn recorded_transcript_replays_identically() {
        let world = DemoWorld::new();
        let transcript = world.record_transcript();
        let mock = MockGateway::new(transcript);
        let session = world.run_once(&mock);
        assert!(session.error.is_none(), "{:?}", session.error);
        assert_eq!(session.answer.as_deref(), Some(EXPECTED_ANSWER));
        assert_eq!(mock.call_count(), 7);
    }

    #[test]
    fn tsv_round_trip_matches_in_memory_raw_kg() {
        let dir = tempfile::tempdir().unwrap();
        let (triples, entities, relations, descriptions) = tsv_files();
        let paths = [
            ("triples.tsv", triples),
            ("entities.tsv", entities),
            ("relations.tsv", relations),
            ("descriptions.tsv", descriptions),
        ];
        for (name, content) in &paths {
            std::fs::write(dir.path().join(name), content).unwrap();
        }
        let loaded = crate::kg::load::load_raw(
            &dir.path().join("triples.tsv"),
            &dir.path().join("entities.tsv"),
            &dir.path().join("relations.tsv"),
            &dir.path().join("descriptions.tsv"),
        )
        .unwrap();
        assert_eq!(loaded, raw_kg());
    }
}

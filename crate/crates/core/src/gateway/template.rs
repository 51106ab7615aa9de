//! Prompt templates for every LLM-facing stage.
//!
//! Template bodies are frozen: a checksum test pins the SHA-256 of each body
//! so accidental edits fail loudly. Placeholders are single-brace `{name}`
//! spans; doubled braces (as in the judge template's JSON example) are plain
//! text and pass through rendering untouched.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::GatewayError;

/// Identifies one prompt template / pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    QeVanilla,
    QeKg,
    Note,
    TripleSelect,
    TripleUpdate,
    TripleSummary,
    Ka,
    AnswerNor,
    AnswerRag,
    DpoJudge,
}

impl TemplateName {
    pub const ALL: [TemplateName; 10] = [
        TemplateName::QeVanilla,
        TemplateName::QeKg,
        TemplateName::Note,
        TemplateName::TripleSelect,
        TemplateName::TripleUpdate,
        TemplateName::TripleSummary,
        TemplateName::Ka,
        TemplateName::AnswerNor,
        TemplateName::AnswerRag,
        TemplateName::DpoJudge,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateName::QeVanilla => "qe_vanilla",
            TemplateName::QeKg => "qe_kg",
            TemplateName::Note => "note",
            TemplateName::TripleSelect => "triple_select",
            TemplateName::TripleUpdate => "triple_update",
            TemplateName::TripleSummary => "triple_summary",
            TemplateName::Ka => "ka",
            TemplateName::AnswerNor => "answer_nor",
            TemplateName::AnswerRag => "answer_rag",
            TemplateName::DpoJudge => "dpo_judge",
        }
    }

    /// The raw template body with unbound placeholders.
    pub fn body(&self) -> &'static str {
        match self {
            TemplateName::QeVanilla => QE_VANILLA,
            TemplateName::QeKg => QE_KG,
            TemplateName::Note => NOTE,
            TemplateName::TripleSelect => TRIPLE_SELECT,
            TemplateName::TripleUpdate => TRIPLE_UPDATE,
            TemplateName::TripleSummary => TRIPLE_SUMMARY,
            TemplateName::Ka => KA,
            TemplateName::AnswerNor => ANSWER_NOR,
            TemplateName::AnswerRag => ANSWER_RAG,
            TemplateName::DpoJudge => DPO_JUDGE,
        }
    }

    /// Placeholder names appearing in the body, in order of first occurrence.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut seen = Vec::new();
        for cap in placeholder_re().captures_iter(self.body()) {
            let name = cap.get(1).unwrap().as_str();
            if !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    }
}

impl std::fmt::Display for TemplateName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").unwrap())
}

/// Binding map for template rendering.
pub type Bindings<'a> = BTreeMap<&'static str, &'a str>;

/// Substitutes every `{name}` placeholder in `template`'s body.
///
/// Pure substitution: nothing else in the body is touched. Every placeholder
/// must be bound; unused bindings are ignored.
pub fn render(template: TemplateName, bindings: &Bindings<'_>) -> Result<String, GatewayError> {
    let body = template.body();
    let mut out = String::with_capacity(body.len() + 256);
    let mut last = 0;
    for cap in placeholder_re().captures_iter(body) {
        let whole = cap.get(0).unwrap();
        let name = cap.get(1).unwrap().as_str();
        let value = bindings.get(name).ok_or_else(|| GatewayError::UnboundPlaceholder {
            template: template.as_str(),
            placeholder: name.to_string(),
        })?;
        out.push_str(&body[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&body[last..]);
    Ok(out)
}

const QE_VANILLA: &str = "Instructions\n\nGenerate a new short query that is distinct from but closely related to the original question. This new query should aim to retrieve additional passages that fill in gaps or provide complementary knowledge necessary to thoroughly address the original question. Ensure the new query is relevant, precise, and broadens the scope of information tied to the original question. Only give me the new short query and do not output any other words.\n\nOriginal Question:\n{question}\n\nNew Query:";

const QE_KG: &str = "Instructions\n\nGenerate a new short query that is distinct from but closely related to the original question. This new query should leverage both the original question and the provided paragraph to retrieve additional passages that fill in gaps or provide complementary knowledge necessary to thoroughly address the original question. Ensure the new query is relevant, precise, and broadens the scope of information tied to the original question. Only give me the new short query and do not output any other words.\n\nOriginal Question:\n{question}\n\nRelated Paragraph:\n{triples_summary}\n\nNew Query:";

const NOTE: &str = "Instructions\n\nBased on the provided document content, write a note. The note should integrate all relevant information from the original text that can help answer the specified question and form a coherent paragraph. Please ensure that the note includes all original text information useful for answering the question.\n\nQuestion to be answered:\n{question}\n\nDocument content:\n{passages}\n\nNote:";

const TRIPLE_SELECT: &str = "Instructions\n\nGiven a question and a set of retrieved entity triples, select only the triples that are relevant to the question.\n\nInformation:\n1. Each triple is in the form of <subject, predicate, object>.\n2. The objects in the selected triples will be further explored in the next steps to gather additional relevant triples information.\n\nRules:\n1. Only select triples from the retrieved set. Do not generate new triples.\n2. A triple is relevant if it contains information about entities or relationships that are important for answering the question, either directly or indirectly.\n   -- For example, if the question asks about a specific person, include triples about that person's name, occupation, relationships, etc.\n   -- If the question asks about an event or entity, include related background information that can help answer the question.\n3. Output triples exactly as they appear in angle brackets (<...>).\n\nQuestion:\n{question}\n\nRetrieved Entity Triples:\n{triples}\n\nSelected Triples:";

const TRIPLE_UPDATE: &str = "Instructions\n\nGiven a question, a set of previously selected entity triples that are relevant to the question, and a new set of retrieved entity triples, select only the triples from the new set of retrieved entity triples that expand or enhance the information provided by the previously selected triples to help address the question.\n\nInformation:\n1. Each triple is in the form of <subject, predicate, object>.\n2. The objects in the selected triples will be further explored in the next steps to gather additional relevant triples information.\n\nRules:\n1. Only select triples from the new set of retrieved entity triples. Do not include duplicates of the previously selected triples or generate new triples.\n2. A triple is considered relevant if it:\n   -- Provides new information that complements or builds upon the entities, relationships, or concepts in the previously selected triples, and\n   -- Helps to better address or provide context for answering the question.\n3. Do not include triples that are unrelated to the question or do not expand on the previously selected triples.\n4. Output triples exactly as they appear in angle brackets (<...>).\n\nQuestion:\n{question}\n\nPreviously Selected Triples:\n{previous_selected_triples}\n\nNew Retrieved Entity Triples:\n{new_retrieved_triples}\n\nSelected Triples:";

const TRIPLE_SUMMARY: &str = "Instructions\n\nGiven a question and a set of retrieved entity triples, write a summary that captures the key information from the triples. If the triples do not provide enough information to directly answer the question, still summarize the information provided in the triples, even if it does not directly relate to the question. Focus on presenting all available details, regardless of their direct relevance to the query, in a concise and informative way.\n\nQuestion:\n{question}\n\nSelected Triples:\n{selected_triples}\n\nSummary:";

const KA: &str = "Instructions\n\nYou are an expert in text enhancement and fact integration. Given a question, a retrieved passage, and relevant factual information, your task is to improve the passage by seamlessly incorporating useful details from the factual information. Ensure that the enhanced passage remains coherent, well-structured, and directly relevant to answering the question. Preserve the original meaning while making the passage more informative. Avoid introducing unrelated content.\n\nQuestion:\n{question}\n\nRetrieved Passage:\n{passage}\n\nRelevant Factual Information:\n{triples_summary}\n\nEnhanced passage:";

const ANSWER_NOR: &str = "Instructions\n\nOnly give me the answer and do not output any other words.\n\nQuestion: {question}\nAnswer:";

const ANSWER_RAG: &str = "Instructions\n\nAnswer the question based on the given passages. Only give me the answer and do not output any other words.\n\nPassages:\n{passages}\n\nQuestion: {question}\nAnswer:";

const DPO_JUDGE: &str = "Instructions\n\nTask: You will receive a list of enhanced passage outputs generated based on a given question, a retrieved passage, and relevant factual information (triples summary).\nYour task is to evaluate and compare the outputs to identify the best and worst ones.\n\nRules:\n1. Focus only on the final enhanced passage. Ignore any prefatory comments, explanations, or formatting differences that do not affect content.\n2. The quality of an enhanced passage is determined by:\n   -- Integration: How well the factual information has been integrated into the passage.\n   -- Coherence: The passage should be logically structured, readable, and maintain a natural flow.\n   -- Relevance: The enhanced passage should directly support answering the question.\n   -- Accuracy: Factual information should be incorporated correctly without hallucination or distortion.\n   -- Preservation: The original passage's meaning should be preserved and enhanced, not changed incorrectly.\n3. If two outputs have substantially the same informational content (even if wording differs slightly), they are considered of equal quality.\n4. If all outputs are of similar quality, or if no significant difference can be determined, use the same _id for both best and worst.\n\nInput:\nQuestion:\n{question}\n\nRetrieved Passage:\n{passage}\n\nRelevant Factual Information:\n{facts}\n\nEnhanced Passage Outputs:\n{output}\n\nOutput format:\nOutput the result as a JSON object:\njson {{\"best_id\": <_id of the highest-quality output>, \"worst_id\": <_id of the lowest-quality output>}}\n\nImportant:\nDo not include any explanations, just the JSON output.";

/// SHA-256 hex digests of every template body, pinned at freeze time.
///
/// Order matches [`TemplateName::ALL`].
pub const TEMPLATE_SHA256: [(&str, &str); 10] = [
    ("qe_vanilla", "08077a22379ffac1980d326b93349794e5a12c0547e5caeb2fd50349c60e64a6"),
    ("qe_kg", "cfe51e9513663785529ad572e82caa11a7a2cb72a21e39b86a3719ae56245d69"),
    ("note", "5cafd80afb4289d13ef1ff2abb16f7ef9bcb8c4fb618a4869e089aa565c3b0a1"),
    ("triple_select", "c2abdd57f450fc687097033bd5408aa5a3a7d7266936ccbbc8b0d8ef4f7f2ab6"),
    ("triple_update", "75774ecc2062c94e9420e329efd8ef8f3403bb6aaf1f8e30321700ef29a754f0"),
    ("triple_summary", "5de379b709bf7b6ed09fc9498f4983629e9d8252b080a9092c2f9d24a98f5d42"),
    ("ka", "caf56d15babb52a28e7ffc836e6ed8b7ebcb8c491a5c4e008aac75857e709978"),
    ("answer_nor", "367e8bfb5e99272d158cc145c437c834abf48e7df546ed449a09909877c68c50"),
    ("answer_rag", "0fdce81bc640e506fd76494679d7ce836d2d51b543fb7cfa60106f20fddb3185"),
    ("dpo_judge", "ece2ddfd09a03ab5518ccf93a8cefda78f56dd5a85310670c99d1f2b181c0cea"),
];

/// Hex SHA-256 of a template body.
pub fn body_sha256(template: TemplateName) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(template.body().as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

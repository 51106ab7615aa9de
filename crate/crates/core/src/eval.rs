//! QA scoring: accuracy, token F1, exact match, and their average.
//!
//! All metrics run on SQuAD-style normalized text: lowercase, ASCII
//! punctuation stripped, article tokens (a/an/the) dropped, whitespace
//! collapsed. Exact match wants the whole normalized string equal to a gold;
//! accuracy is looser — some gold must appear as a contiguous token run
//! inside the prediction, so "martin marietta corporation" still scores
//! against gold "Martin Marietta". Yes/no golds are special-cased: there the
//! prediction's first token decides.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty evaluation batch")]
    EmptyBatch,
    #[error("example {0:?} has no gold answers")]
    EmptyGolds(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
}

/// One gold-labeled question.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    /// Ids of passages known to support the answer; enables retrieval
    /// recall when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_passage_ids: Option<Vec<String>>,
}

/// Normalizes answer text: lowercase, strip ASCII punctuation, drop article
/// tokens, collapse whitespace.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String =
        lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|tok| !matches!(*tok, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    normalize(text).split_whitespace().map(str::to_string).collect()
}

/// 1 iff the normalized prediction equals some normalized gold.
pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize(pred);
    if golds.iter().any(|g| normalize(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn f1_single(pred_tokens: &[String], gold_tokens: &[String]) -> f64 {
    if pred_tokens.is_empty() && gold_tokens.is_empty() {
        return 1.0;
    }
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold_tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0i64;
    for t in pred_tokens {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-multiset F1 against the best-matching gold.
pub fn f1(pred: &str, golds: &[String]) -> f64 {
    let p = tokens(pred);
    golds
        .iter()
        .map(|g| f1_single(&p, &tokens(g)))
        .fold(0.0, f64::max)
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() {
        return true;
    }
    if needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn is_yes_no(golds: &[String]) -> bool {
    !golds.is_empty() && golds.iter().all(|g| matches!(normalize(g).as_str(), "yes" | "no"))
}

/// 1 iff some normalized gold occurs as a contiguous token run in the
/// normalized prediction. When every gold is yes/no (boolean datasets), the
/// prediction's first token must match instead.
pub fn accuracy(pred: &str, golds: &[String]) -> f64 {
    let p = tokens(pred);
    if is_yes_no(golds) {
        let first = p.first().map(String::as_str).unwrap_or("");
        return if golds.iter().any(|g| normalize(g) == first) { 1.0 } else { 0.0 };
    }
    if golds.iter().any(|g| contains_run(&p, &tokens(g))) {
        1.0
    } else {
        0.0
    }
}

/// Per-example scores.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub acc: f64,
    pub f1: f64,
    pub em: f64,
    /// True when no prediction was supplied; all metrics are zero then.
    pub missing: bool,
}

/// Batch-level metrics (fractions in `[0, 1]`) with the per-example
/// breakdown.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub f1: f64,
    pub em: f64,
    pub avg: f64,
    pub missing_predictions: usize,
    pub examples: Vec<ExampleScore>,
}

impl MetricReport {
    /// Report JSON: headline numbers ×100 at one decimal (the usual table
    /// convention) plus full-precision values and the breakdown.
    pub fn to_json(&self) -> serde_json::Value {
        let x100 = |v: f64| (v * 1000.0).round() / 10.0;
        serde_json::json!({
            "summary": {
                "acc": x100(self.acc),
                "f1": x100(self.f1),
                "em": x100(self.em),
                "avg": x100(self.avg),
            },
            "precise": {
                "acc": self.acc,
                "f1": self.f1,
                "em": self.em,
                "avg": self.avg,
            },
            "missing_predictions": self.missing_predictions,
            "examples": self.examples,
        })
    }
}

/// Scores a batch. Examples lacking a prediction score zero on every metric
/// and are flagged; an empty batch is an error.
pub fn evaluate(
    examples: &[QAExample],
    predictions: &HashMap<String, String>,
) -> Result<MetricReport, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    let mut scores = Vec::with_capacity(examples.len());
    let mut missing = 0usize;
    for ex in examples {
        if ex.gold_answers.is_empty() {
            return Err(EvalError::EmptyGolds(ex.id.clone()));
        }
        let score = match predictions.get(&ex.id) {
            Some(pred) => ExampleScore {
                id: ex.id.clone(),
                acc: accuracy(pred, &ex.gold_answers),
                f1: f1(pred, &ex.gold_answers),
                em: exact_match(pred, &ex.gold_answers),
                missing: false,
            },
            None => {
                missing += 1;
                log::warn!("no prediction for example {:?}; scoring zero", ex.id);
                ExampleScore { id: ex.id.clone(), acc: 0.0, f1: 0.0, em: 0.0, missing: true }
            }
        };
        scores.push(score);
    }
    let n = scores.len() as f64;
    let acc = scores.iter().map(|s| s.acc).sum::<f64>() / n;
    let f1v = scores.iter().map(|s| s.f1).sum::<f64>() / n;
    let em = scores.iter().map(|s| s.em).sum::<f64>() / n;
    Ok(MetricReport {
        acc,
        f1: f1v,
        em,
        avg: (acc + f1v + em) / 3.0,
        missing_predictions: missing,
        examples: scores,
    })
}

/// Loads gold examples from JSONL `{"id", "question", "answers": [...]}`.
pub fn load_examples(path: &Path) -> Result<Vec<QAExample>, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QAExample = serde_json::from_str(&line)
            .map_err(|e| EvalError::Parse { line: i + 1, msg: e.to_string() })?;
        if ex.gold_answers.is_empty() {
            return Err(EvalError::EmptyGolds(ex.id));
        }
        if !seen.insert(ex.id.clone()) {
            return Err(EvalError::DuplicateId(ex.id));
        }
        out.push(ex);
    }
    Ok(out)
}

/// Loads predictions from JSONL `{"id", "answer"}`.
pub fn load_predictions(path: &Path) -> Result<HashMap<String, String>, EvalError> {
    #[derive(serde::Deserialize)]
    struct Line {
        id: String,
        answer: String,
    }
    let file = std::fs::File::open(path)?;
    let mut out = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line)
            .map_err(|e| EvalError::Parse { line: i + 1, msg: e.to_string() })?;
        if out.insert(rec.id.clone(), rec.answer).is_some() {
            return Err(EvalError::DuplicateId(rec.id));
        }
    }
    Ok(out)
}

/// Fraction of recall-labeled examples whose top-k retrieval contains at
/// least one gold passage. `None` when no example carries labels.
pub fn recall_at_k(
    examples: &[QAExample],
    retrieved: &HashMap<String, Vec<String>>,
    k: usize,
) -> Option<f64> {
    let mut labeled = 0usize;
    let mut hit = 0usize;
    for ex in examples {
        let Some(golds) = &ex.gold_passage_ids else { continue };
        labeled += 1;
        let ids = retrieved.get(&ex.id).map(Vec::as_slice).unwrap_or(&[]);
        if ids.iter().take(k).any(|id| golds.contains(id)) {
            hit += 1;
        }
    }
    (labeled > 0).then(|| hit as f64 / labeled as f64)
}

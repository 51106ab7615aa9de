//! Preference-data construction for DPO training, plus the DPO loss itself.
//!
//! The factory replays the knowledge-augmentation step under a grid of
//! decoding temperatures, asks a judge model to pick the best and worst of
//! the sampled rewrites, and emits `(prompt, chosen, rejected)` records in
//! the JSONL shape standard DPO trainers consume. Judgments that are
//! ambiguous — same id for best and worst, or unparseable even after one
//! re-ask — are dropped rather than guessed at. Gradient updates themselves
//! are out of scope; [`dpo_loss`] is provided as a pure function so training
//! code elsewhere can share the exact objective.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::gateway::{
    render, Bindings, ChatRequest, DecodingParams, Gateway, GatewayError, TemplateName,
};

#[derive(Debug, thiserror::Error)]
pub enum DpoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("sampling grid must not be empty")]
    EmptyGrid,
    #[error("sampling grid entries must be distinct (duplicate at position {0})")]
    DuplicateGridEntry(usize),
    #[error("dpo_loss inputs must be finite")]
    NonFinite,
    #[error("beta must be finite and positive, got {0}")]
    BadBeta(f64),
    #[error("preference round must be 1 or 2, got {0}")]
    BadRound(u8),
    #[error("corrupt resume cursor {path:?}: {msg}")]
    Cursor { path: PathBuf, msg: String },
}

/// Ordered decoding settings used to diversify knowledge-augmentation
/// samples. The default grid spans greedy to high-temperature decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    entries: Vec<DecodingParams>,
}

impl SamplingGrid {
    pub fn new(entries: Vec<DecodingParams>) -> Result<Self, DpoError> {
        if entries.is_empty() {
            return Err(DpoError::EmptyGrid);
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].contains(e) {
                return Err(DpoError::DuplicateGridEntry(i));
            }
        }
        Ok(SamplingGrid { entries })
    }

    pub fn entries(&self) -> &[DecodingParams] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for SamplingGrid {
    fn default() -> Self {
        let pairs = [(0.0, 1.0), (0.3, 0.95), (0.5, 0.9), (0.7, 0.9), (0.9, 0.8), (1.0, 0.7)];
        SamplingGrid {
            entries: pairs
                .iter()
                .map(|&(temperature, top_p)| DecodingParams { temperature, top_p, max_tokens: 1024 })
                .collect(),
        }
    }
}

/// The knowledge-augmentation input a preference example is built from.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KaInput {
    pub question: String,
    pub passage_note: String,
    pub facts_summary: String,
}

impl KaInput {
    /// Renders the exact augmentation prompt the pipeline would send.
    pub fn render_prompt(&self) -> Result<String, GatewayError> {
        let mut b = Bindings::new();
        b.insert("question", &self.question);
        b.insert("passage", &self.passage_note);
        b.insert("triples_summary", &self.facts_summary);
        render(TemplateName::Ka, &b)
    }
}

/// One sampled rewrite. Ids follow grid order, numbered from 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub text: String,
    pub params: DecodingParams,
}

/// Successful samples for one input, plus the prompt they all share.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub input: KaInput,
    pub prompt: String,
    pub candidates: Vec<Candidate>,
}

/// Samples one rewrite per grid entry. Individual gateway failures only
/// drop that candidate; a set that ends up with fewer than two successes
/// cannot form a preference pair and is discarded (`None`).
pub fn sample_candidates(
    input: &KaInput,
    grid: &SamplingGrid,
    gateway: &dyn Gateway,
) -> Result<Option<CandidateSet>, DpoError> {
    let prompt = input.render_prompt()?;
    let mut candidates = Vec::with_capacity(grid.len());
    for (i, params) in grid.entries().iter().enumerate() {
        let req = ChatRequest::new(TemplateName::Ka, prompt.clone()).with_params(*params);
        match gateway.chat(&req) {
            Ok(reply) => candidates.push(Candidate {
                id: i + 1,
                text: reply.text.trim().to_string(),
                params: *params,
            }),
            Err(e) => {
                log::warn!("candidate {} failed, continuing without it: {e}", i + 1);
            }
        }
    }
    if candidates.len() < 2 {
        log::warn!(
            "discarding candidate set with {} success(es); a pair needs two",
            candidates.len()
        );
        return Ok(None);
    }
    Ok(Some(CandidateSet { input: input.clone(), prompt, candidates }))
}

/// Judge outcome for one candidate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Decided { best_id: usize, worst_id: usize, raw: String },
    /// Dropped: equal ids, nothing to compare, or unparseable after the
    /// single re-ask.
    Ambiguous { reason: String },
}

#[derive(Debug, serde::Deserialize)]
struct VerdictJson {
    best_id: usize,
    worst_id: usize,
}

/// Extracts the first balanced `{...}` object from `text`, tolerating prose
/// around it and braces inside JSON strings.
fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_verdict(reply: &str, valid_ids: &[usize]) -> Option<(usize, usize)> {
    let json = extract_json_object(reply)?;
    let v: VerdictJson = serde_json::from_str(json).ok()?;
    if valid_ids.contains(&v.best_id) && valid_ids.contains(&v.worst_id) {
        Some((v.best_id, v.worst_id))
    } else {
        None
    }
}

/// Asks the judge to name the best and worst candidate.
///
/// Candidates whose trimmed text is identical are collapsed to the first
/// occurrence before judging (equal content is equal quality, so offering
/// both only invites a coin flip). A reply that cannot be parsed — no JSON,
/// bad ids, or a transport error — is retried exactly once; equal best/worst
/// ids are taken at face value as "no meaningful difference". Both paths end
/// in [`Verdict::Ambiguous`].
pub fn judge(set: &CandidateSet, gateway: &dyn Gateway) -> Result<Verdict, DpoError> {
    let mut distinct: Vec<&Candidate> = Vec::new();
    for c in &set.candidates {
        if !distinct.iter().any(|d| d.text.trim() == c.text.trim()) {
            distinct.push(c);
        }
    }
    if distinct.len() < 2 {
        return Ok(Verdict::Ambiguous {
            reason: "fewer than two distinct candidate texts".to_string(),
        });
    }
    let blocks: Vec<String> =
        distinct.iter().map(|c| format!("_id: {}\n{}", c.id, c.text.trim())).collect();
    let output = blocks.join("\n\n");
    let mut b = Bindings::new();
    b.insert("question", &set.input.question);
    b.insert("passage", &set.input.passage_note);
    b.insert("facts", &set.input.facts_summary);
    b.insert("output", &output);
    let prompt = render(TemplateName::DpoJudge, &b)?;
    let valid_ids: Vec<usize> = distinct.iter().map(|c| c.id).collect();

    for attempt in 0..2 {
        let reply = match gateway.chat(&ChatRequest::new(TemplateName::DpoJudge, prompt.clone())) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("judge call failed (attempt {}): {e}", attempt + 1);
                continue;
            }
        };
        match parse_verdict(&reply.text, &valid_ids) {
            Some((best, worst)) if best == worst => {
                return Ok(Verdict::Ambiguous {
                    reason: format!("judge returned the same id ({best}) for best and worst"),
                });
            }
            Some((best_id, worst_id)) => {
                return Ok(Verdict::Decided { best_id, worst_id, raw: reply.text });
            }
            None => log::warn!("unparseable judge reply (attempt {}): {:?}", attempt + 1, reply.text),
        }
    }
    Ok(Verdict::Ambiguous { reason: "unparseable judge reply after re-ask".to_string() })
}

/// One emitted training record, in the JSONL shape DPO trainers consume.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PreferenceExample {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    /// Which activation depth the facts came from (1 or 2).
    pub round: u8,
    pub verdict_raw: String,
}

/// One unit of work for [`build_dataset`]: an augmentation input tagged with
/// the activation round (1 or 2) that produced its facts summary. Serialized
/// flat: `{"question", "passage_note", "facts_summary", "round"}`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DpoInput {
    #[serde(flatten)]
    pub input: KaInput,
    pub round: u8,
}

/// Counters from one [`build_dataset`] invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct BuildReport {
    pub emitted: usize,
    pub ambiguous: usize,
    pub discarded_sets: usize,
    pub inputs_processed: usize,
    /// Index of the first input handled this run (> 0 after a resume).
    pub resumed_from: usize,
}

fn cursor_path(out_path: &Path) -> PathBuf {
    let mut name = out_path.file_name().unwrap_or_default().to_os_string();
    name.push(".cursor");
    out_path.with_file_name(name)
}

fn read_cursor(path: &Path) -> Result<usize, DpoError> {
    match std::fs::read_to_string(path) {
        Ok(text) => text.trim().parse().map_err(|e| DpoError::Cursor {
            path: path.to_path_buf(),
            msg: format!("{e}"),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
        Err(e) => Err(e.into()),
    }
}

fn write_cursor(path: &Path, value: usize) -> Result<(), DpoError> {
    let tmp = path.with_extension("cursor.tmp");
    std::fs::write(&tmp, format!("{value}\n"))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Streams inputs through sample → judge → filter and appends surviving
/// pairs to `out_path` as JSONL.
///
/// A sibling `<file>.cursor` records how many inputs are fully handled; it
/// is rewritten atomically after every input, so re-running after an
/// interruption resumes where work stopped and — under the same gateway
/// replies — produces a byte-identical dataset. Inputs are processed in
/// order, one at a time: deterministic output order is what makes that
/// resume guarantee checkable. `target_count` (when set) stops the run once
/// the dataset holds that many examples.
pub fn build_dataset(
    inputs: &[DpoInput],
    grid: &SamplingGrid,
    gateway: &dyn Gateway,
    target_count: Option<usize>,
    out_path: &Path,
) -> Result<BuildReport, DpoError> {
    let cursor = cursor_path(out_path);
    let start = read_cursor(&cursor)?;
    if start > inputs.len() {
        return Err(DpoError::Cursor {
            path: cursor,
            msg: format!("cursor {start} beyond input count {}", inputs.len()),
        });
    }

    let mut emitted = if start == 0 {
        0
    } else {
        std::fs::read_to_string(out_path)?.lines().filter(|l| !l.trim().is_empty()).count()
    };
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(start > 0)
        .truncate(start == 0)
        .open(out_path)?;

    let mut report = BuildReport { resumed_from: start, ..BuildReport::default() };
    for (i, item) in inputs.iter().enumerate().skip(start) {
        if target_count.is_some_and(|t| emitted >= t) {
            break;
        }
        if !matches!(item.round, 1 | 2) {
            return Err(DpoError::BadRound(item.round));
        }
        match sample_candidates(&item.input, grid, gateway)? {
            None => report.discarded_sets += 1,
            Some(set) => match judge(&set, gateway)? {
                Verdict::Ambiguous { reason } => {
                    log::debug!("input {i} dropped: {reason}");
                    report.ambiguous += 1;
                }
                Verdict::Decided { best_id, worst_id, raw } => {
                    let text_of = |id: usize| {
                        set.candidates.iter().find(|c| c.id == id).map(|c| c.text.clone())
                    };
                    let (Some(chosen), Some(rejected)) = (text_of(best_id), text_of(worst_id))
                    else {
                        unreachable!("judge only returns ids present in the set");
                    };
                    if chosen.trim() == rejected.trim() {
                        report.ambiguous += 1;
                    } else {
                        let example = PreferenceExample {
                            prompt: set.prompt.clone(),
                            chosen,
                            rejected,
                            round: item.round,
                            verdict_raw: raw,
                        };
                        serde_json::to_writer(&mut file, &example)
                            .map_err(std::io::Error::other)?;
                        file.write_all(b"\n")?;
                        file.flush()?;
                        emitted += 1;
                        report.emitted += 1;
                    }
                }
            },
        }
        report.inputs_processed = i + 1;
        write_cursor(&cursor, i + 1)?;
    }
    if report.inputs_processed == 0 {
        report.inputs_processed = start;
    }
    Ok(report)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// The DPO objective for one preference pair:
/// `−log σ(β·((logp_chosen_policy − logp_chosen_ref) − (logp_rejected_policy
/// − logp_rejected_ref)))`, computed through a numerically stable softplus.
pub fn dpo_loss(
    logp_chosen_policy: f64,
    logp_chosen_ref: f64,
    logp_rejected_policy: f64,
    logp_rejected_ref: f64,
    beta: f64,
) -> Result<f64, DpoError> {
    let inputs = [logp_chosen_policy, logp_chosen_ref, logp_rejected_policy, logp_rejected_ref];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(DpoError::NonFinite);
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(DpoError::BadBeta(beta));
    }
    let margin =
        (logp_chosen_policy - logp_chosen_ref) - (logp_rejected_policy - logp_rejected_ref);
    Ok(softplus(-beta * margin))
}

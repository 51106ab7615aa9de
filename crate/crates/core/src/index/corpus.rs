//! Passage corpus: JSONL of `{"id", "title", "text"}` records.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::IndexError;

/// One retrievable passage.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// In-memory corpus with id lookup.
#[derive(Debug, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(passages: Vec<Passage>) -> Result<Self, IndexError> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(p.id.clone()));
            }
        }
        Ok(Corpus { passages, by_id })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    /// Text used when embedding a passage: title and body joined by a space.
    pub fn embedding_text(p: &Passage) -> String {
        if p.title.is_empty() {
            p.text.clone()
        } else {
            format!("{} {}", p.title, p.text)
        }
    }
}

/// Loads a JSONL corpus; duplicate ids and malformed lines are errors.
pub fn load_corpus(path: &Path) -> Result<Corpus, IndexError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut passages = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Passage = serde_json::from_str(&line)
            .map_err(|e| IndexError::CorpusParse { line: i + 1, msg: e.to_string() })?;
        passages.push(p);
    }
    Corpus::new(passages)
}

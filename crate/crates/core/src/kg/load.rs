//! TSV dump parsing (Wikidata5M transductive layout).
//!
//! Four files feed one [`RawKg`]:
//! - entity names: `entity_id<TAB>name1<TAB>name2...` (first name canonical)
//! - relation names: same shape
//! - descriptions: `entity_id<TAB>description text` (text may contain tabs)
//! - triples: `head_id<TAB>relation_id<TAB>tail_id`
//!
//! Malformed lines abort with the offending line number. References to ids
//! that never appear in the name files are counted and dropped, not fatal:
//! public dumps routinely carry a few stragglers.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::KgError;

/// Unfiltered entity record; description is absent until the descriptions
/// file supplies one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntity {
    pub ext_id: String,
    pub names: Vec<String>,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRelation {
    pub ext_id: String,
    pub names: Vec<String>,
}

/// Parsed but unfiltered KG: all name records plus triples interned against
/// them. Handles index into `entities`/`relations` in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawKg {
    pub entities: Vec<RawEntity>,
    pub relations: Vec<RawRelation>,
    /// `[head, relation, tail]` raw handles, in triples-file order.
    pub triples: Vec<[u32; 3]>,
    /// Records dropped because they referenced an unknown id.
    pub dangling_dropped: u64,
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> KgError {
    KgError::Malformed { path: path.to_path_buf(), line, msg: msg.into() }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>, KgError> {
    let file = std::fs::File::open(path)?;
    Ok(std::io::BufReader::new(file).lines())
}

/// Records in file order plus a source-id → position lookup.
type NamesTable = (Vec<(String, Vec<String>)>, HashMap<String, u32>);

/// Parses a names file (`id<TAB>name1<TAB>name2...`). Duplicate ids merge:
/// unseen names append after the existing ones.
fn load_names(path: &Path) -> Result<NamesTable, KgError> {
    let mut records: Vec<(String, Vec<String>)> = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();
    for (lineno, line) in open_lines(path)?.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        let names: Vec<String> = fields
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if id.is_empty() || names.is_empty() {
            return Err(malformed(path, lineno + 1, "expected `id<TAB>name...`"));
        }
        match index.get(id) {
            Some(&h) => {
                let existing = &mut records[h as usize].1;
                for n in names {
                    if !existing.contains(&n) {
                        existing.push(n);
                    }
                }
            }
            None => {
                index.insert(id.to_string(), records.len() as u32);
                records.push((id.to_string(), names));
            }
        }
    }
    Ok((records, index))
}

/// Loads the four dump files into a [`RawKg`].
///
/// Triples or descriptions that reference unknown ids are dropped and
/// counted in `dangling_dropped` (with a warning); malformed lines are
/// errors carrying the file path and 1-based line number.
pub fn load_raw(
    triples_path: &Path,
    entities_path: &Path,
    relations_path: &Path,
    descriptions_path: &Path,
) -> Result<RawKg, KgError> {
    let (entity_records, entity_index) = load_names(entities_path)?;
    let (relation_records, relation_index) = load_names(relations_path)?;

    let mut entities: Vec<RawEntity> = entity_records
        .into_iter()
        .map(|(ext_id, names)| RawEntity { ext_id, names, description: None })
        .collect();
    let relations: Vec<RawRelation> = relation_records
        .into_iter()
        .map(|(ext_id, names)| RawRelation { ext_id, names })
        .collect();

    let mut dangling_dropped = 0u64;

    for (lineno, line) in open_lines(descriptions_path)?.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // Only the first tab separates id from text; descriptions may
        // themselves contain tabs.
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| malformed(descriptions_path, lineno + 1, "expected `id<TAB>text`"))?;
        match entity_index.get(id.trim()) {
            Some(&h) => entities[h as usize].description = Some(text.trim().to_string()),
            None => {
                log::warn!(
                    "{}:{}: description for unknown entity {:?} dropped",
                    descriptions_path.display(),
                    lineno + 1,
                    id
                );
                dangling_dropped += 1;
            }
        }
    }

    let mut triples: Vec<[u32; 3]> = Vec::new();
    for (lineno, line) in open_lines(triples_path)?.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(malformed(
                triples_path,
                lineno + 1,
                format!("expected `head<TAB>relation<TAB>tail`, got {} fields", fields.len()),
            ));
        }
        let head = entity_index.get(fields[0]);
        let rel = relation_index.get(fields[1]);
        let tail = entity_index.get(fields[2]);
        match (head, rel, tail) {
            (Some(&h), Some(&r), Some(&t)) => triples.push([h, r, t]),
            _ => {
                log::warn!(
                    "{}:{}: triple references unknown id, dropped: {line}",
                    triples_path.display(),
                    lineno + 1
                );
                dangling_dropped += 1;
            }
        }
    }

    Ok(RawKg { entities, relations, triples, dangling_dropped })
}

//! Exact top-k inner-product retrieval over embedding collections.
//!
//! One [`EmbeddingMatrix`] serves both uses in the system: entity-description
//! vectors for seed selection and passage vectors for corpus retrieval.
//! Search is an exact scan — no approximation — so results are reproducible
//! and directly checkable against a brute-force argsort.
//!
//! Vector files are binary: magic `SPQEMB1`, little-endian u32 count and
//! dim, then `count x dim` little-endian f32 rows. Item ids live in a
//! parallel text file, one id per line.

pub mod corpus;
pub mod embed;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub use corpus::{load_corpus, Corpus, Passage};
pub use embed::{CachedEmbedder, EmbedClient, HashEmbedder, HttpEmbedClient, MapEmbedder};

pub const VECTORS_MAGIC: &[u8; 7] = b"SPQEMB1";

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("vectors file: {0}")]
    Format(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("query dim {got} does not match index dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{rows} vector rows but {ids} ids")]
    IdCountMismatch { rows: usize, ids: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("corpus parse error at line {line}: {msg}")]
    CorpusParse { line: usize, msg: String },
    #[error("embedding endpoint returned status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed embedding reply: {0}")]
    MalformedReply(String),
    #[error("embedding request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("no embedding registered for text {0:?}")]
    UnknownText(String),
}

/// One retrieval result: item id and raw inner-product score.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredHit {
    pub id: String,
    pub score: f32,
}

/// Dense row-major f32 embedding collection with parallel ids.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Builds from in-memory rows; ids must be unique and rows uniform.
    pub fn new(dim: usize, ids: Vec<String>, rows: Vec<Vec<f32>>) -> Result<Self, IndexError> {
        if rows.len() != ids.len() {
            return Err(IndexError::IdCountMismatch { rows: rows.len(), ids: ids.len() });
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(IndexError::DimMismatch { expected: dim, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, ids, data)
    }

    fn from_flat(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::Format("dim must be positive".to_string()));
        }
        if data.len() != ids.len() * dim {
            return Err(IndexError::Format(format!(
                "{} floats cannot hold {} rows of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        let mut by_id = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if by_id.insert(id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingMatrix { dim, ids, data, by_id })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn vector_for(&self, id: &str) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// Exact top-k by inner product: `min(k, count)` hits sorted by score
    /// descending, ties broken by ascending id.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<ScoredHit>, IndexError> {
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch { expected: self.dim, got: query.len() });
        }
        let mut scored: Vec<(f32, usize)> = (0..self.count())
            .map(|i| (dot(query, self.row(i)), i))
            .collect();
        let cmp = |a: &(f32, usize), b: &(f32, usize)| {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, i)| ScoredHit { id: self.ids[i].clone(), score })
            .collect())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut sum = 0.0f32;
    for i in 0..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

/// Loads a vectors file plus its parallel ids file.
pub fn build_index(vectors_path: &Path, ids_path: &Path) -> Result<EmbeddingMatrix, IndexError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(vectors_path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(eof_as_format)?;
    if &magic != VECTORS_MAGIC {
        return Err(IndexError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(eof_as_format)?;
    let count = u32::from_le_bytes(buf4) as usize;
    r.read_exact(&mut buf4).map_err(eof_as_format)?;
    let dim = u32::from_le_bytes(buf4) as usize;
    if dim == 0 {
        return Err(IndexError::Format("dim must be positive".to_string()));
    }

    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * dim * 4 {
        return Err(IndexError::Format(format!(
            "header promises {count}x{dim} f32s ({} bytes) but file holds {}",
            count * dim * 4,
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(count * dim);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }

    let ids_text = std::fs::read_to_string(ids_path)?;
    let ids: Vec<String> = ids_text.lines().map(str::to_string).collect();
    if ids.len() != count {
        return Err(IndexError::IdCountMismatch { rows: count, ids: ids.len() });
    }
    EmbeddingMatrix::from_flat(dim, ids, data)
}

fn eof_as_format(e: std::io::Error) -> IndexError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        IndexError::Format("truncated vectors file".to_string())
    } else {
        IndexError::Io(e)
    }
}

/// Writes a vectors file + ids file pair readable by [`build_index`].
pub fn write_index(
    matrix: &EmbeddingMatrix,
    vectors_path: &Path,
    ids_path: &Path,
) -> Result<(), IndexError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(vectors_path)?);
    w.write_all(VECTORS_MAGIC)?;
    w.write_all(&(matrix.count() as u32).to_le_bytes())?;
    w.write_all(&(matrix.dim() as u32).to_le_bytes())?;
    for v in &matrix.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let mut ids = String::new();
    for id in &matrix.ids {
        ids.push_str(id);
        ids.push('\n');
    }
    std::fs::write(ids_path, ids)?;
    Ok(())
}

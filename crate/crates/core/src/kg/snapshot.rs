//! Versioned binary snapshot of a filtered store, for fast reload without
//! re-parsing and re-filtering the TSV dumps.
//!
//! Layout (all integers little-endian; `string` = u32 byte length + UTF-8):
//!
//! ```text
//! magic             6 bytes  "SPQKG1"
//! entity_count      u32
//! relation_count    u32
//! triple_count      u64
//! filter stats      6 x u64  entities_in/out, relations_in/out, triples_in/out
//! entities          entity_count x { string ext_id; u32 n; n x string names;
//!                                    string description }
//! relations         relation_count x { string ext_id; u32 n; n x string names }
//! triples           triple_count x { u32 head; u32 relation; u32 tail }
//! ```
//!
//! Triples are stored in store order (grouped by head), so adjacency can be
//! rebuilt with a single counting pass on load.

use std::io::{Read, Write};
use std::path::Path;

use super::{Entity, FilterStats, KgError, KgStore, Relation, Triple};

pub const MAGIC: &[u8; 6] = b"SPQKG1";

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, KgError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, KgError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_string(r: &mut impl Read) -> Result<String, KgError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|e| KgError::Snapshot(format!("invalid UTF-8: {e}")))
}

fn truncated(e: std::io::Error) -> KgError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        KgError::Snapshot("truncated snapshot".to_string())
    } else {
        KgError::Io(e)
    }
}

/// Serializes `store` to `path`.
pub fn save(store: &KgStore, path: &Path) -> Result<(), KgError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, store.entity_count() as u32)?;
    write_u32(&mut w, store.relation_count() as u32)?;
    write_u64(&mut w, store.triple_count() as u64)?;
    let s = store.stats;
    for v in [s.entities_in, s.entities_out, s.relations_in, s.relations_out, s.triples_in, s.triples_out] {
        write_u64(&mut w, v)?;
    }
    for (_, e) in store.entities() {
        write_string(&mut w, &e.ext_id)?;
        write_u32(&mut w, e.names.len() as u32)?;
        for n in &e.names {
            write_string(&mut w, n)?;
        }
        write_string(&mut w, &e.description)?;
    }
    for (_, r) in store.relations() {
        write_string(&mut w, &r.ext_id)?;
        write_u32(&mut w, r.names.len() as u32)?;
        for n in &r.names {
            write_string(&mut w, n)?;
        }
    }
    for t in store.triples() {
        write_u32(&mut w, t.head)?;
        write_u32(&mut w, t.relation)?;
        write_u32(&mut w, t.tail)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a snapshot written by [`save`], rebuilding lookup tables and
/// adjacency.
pub fn load(path: &Path) -> Result<KgStore, KgError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(KgError::Snapshot(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let entity_count = read_u32(&mut r)? as usize;
    let relation_count = read_u32(&mut r)? as usize;
    let triple_count = read_u64(&mut r)? as usize;
    let stats = FilterStats {
        entities_in: read_u64(&mut r)?,
        entities_out: read_u64(&mut r)?,
        relations_in: read_u64(&mut r)?,
        relations_out: read_u64(&mut r)?,
        triples_in: read_u64(&mut r)?,
        triples_out: read_u64(&mut r)?,
    };
    if stats.entities_out != entity_count as u64 || stats.triples_out != triple_count as u64 {
        return Err(KgError::Snapshot("stats disagree with table sizes".to_string()));
    }

    let mut entities = Vec::with_capacity(entity_count);
    for _ in 0..entity_count {
        let ext_id = read_string(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut names = Vec::with_capacity(n);
        for _ in 0..n {
            names.push(read_string(&mut r)?);
        }
        if names.is_empty() {
            return Err(KgError::Snapshot(format!("entity {ext_id} has no names")));
        }
        let description = read_string(&mut r)?;
        entities.push(Entity { ext_id, names, description });
    }

    let mut relations = Vec::with_capacity(relation_count);
    for _ in 0..relation_count {
        let ext_id = read_string(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut names = Vec::with_capacity(n);
        for _ in 0..n {
            names.push(read_string(&mut r)?);
        }
        if names.is_empty() {
            return Err(KgError::Snapshot(format!("relation {ext_id} has no names")));
        }
        relations.push(Relation { ext_id, names });
    }

    let mut triples = Vec::with_capacity(triple_count);
    let mut prev_head = 0u32;
    for i in 0..triple_count {
        let head = read_u32(&mut r)?;
        let relation = read_u32(&mut r)?;
        let tail = read_u32(&mut r)?;
        if head as usize >= entity_count
            || tail as usize >= entity_count
            || relation as usize >= relation_count
        {
            return Err(KgError::Snapshot(format!("triple {i} has out-of-range handle")));
        }
        if head < prev_head {
            return Err(KgError::Snapshot("triples not grouped by head".to_string()));
        }
        prev_head = head;
        triples.push(Triple { head, relation, tail });
    }

    Ok(KgStore::from_parts(entities, relations, triples, stats))
}

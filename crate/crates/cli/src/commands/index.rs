//! `spq index` — build embedding files with the deterministic hash
//! embedder, or validate existing ones and write a checksum manifest.
//!
//! Vector files produced elsewhere (real embedding models) are accepted
//! as-is by `validate`; the build subcommands exist so a fully offline
//! setup can exercise the whole pipeline.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use spq_core::index::embed::{EmbedClient, HashEmbedder};
use spq_core::index::{build_index, load_corpus, write_index, Corpus, EmbeddingMatrix};
use spq_core::kg::snapshot;

use super::{config_error, file_sha256, no_data, EXIT_OK};
use crate::config::Settings;

#[derive(Debug, clap::Args)]
pub struct IndexArgs {
    #[command(subcommand)]
    cmd: IndexCmd,
}

#[derive(Debug, clap::Subcommand)]
enum IndexCmd {
    /// Embed a passage corpus ("title text" per passage).
    BuildCorpus {
        /// Corpus JSONL ({"id","title","text"}).
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Vector dimensionality.
        #[arg(long)]
        dim: Option<usize>,
        /// Vectors output file.
        #[arg(long, value_name = "FILE")]
        vectors: Option<PathBuf>,
        /// Parallel ids output file (one id per line).
        #[arg(long, value_name = "FILE")]
        ids: Option<PathBuf>,
    },
    /// Embed snapshot entities ("name: description" per entity).
    BuildEntities {
        /// KG snapshot produced by `spq prep`.
        #[arg(long, value_name = "FILE")]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, value_name = "FILE")]
        vectors: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        ids: Option<PathBuf>,
    },
    /// Check a vectors/ids pair and write a manifest with checksums.
    Validate {
        #[arg(long, value_name = "FILE")]
        vectors: PathBuf,
        #[arg(long, value_name = "FILE")]
        ids: PathBuf,
        /// Manifest output (default: <vectors>.manifest.json).
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
    },
}

pub fn run(args: &IndexArgs, settings: &Settings) -> Result<i32> {
    match &args.cmd {
        IndexCmd::BuildCorpus { corpus, dim, vectors, ids } => {
            let Some(corpus_path) = corpus.clone().or_else(|| settings.paths.corpus.clone())
            else {
                return config_error("missing --corpus (or [paths].corpus)");
            };
            let Some(vectors) = vectors.clone().or_else(|| settings.paths.corpus_vectors.clone())
            else {
                return config_error("missing --vectors (or [paths].corpus_vectors)");
            };
            let Some(ids) = ids.clone().or_else(|| settings.paths.corpus_ids.clone()) else {
                return config_error("missing --ids (or [paths].corpus_ids)");
            };
            let corpus = match load_corpus(&corpus_path) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            if corpus.is_empty() {
                return no_data("corpus has no passages");
            }
            let texts: Vec<String> =
                corpus.passages().iter().map(Corpus::embedding_text).collect();
            let row_ids: Vec<String> =
                corpus.passages().iter().map(|p| p.id.clone()).collect();
            build_and_write(&texts, row_ids, dim.unwrap_or(settings.embed_dim), &vectors, &ids)?;
            println!(
                "embedded {} passages at dim {} -> {}",
                corpus.len(),
                dim.unwrap_or(settings.embed_dim),
                vectors.display()
            );
            Ok(EXIT_OK)
        }
        IndexCmd::BuildEntities { snapshot: snap, dim, vectors, ids } => {
            let Some(snap_path) = snap.clone().or_else(|| settings.paths.snapshot.clone()) else {
                return config_error("missing --snapshot (or [paths].snapshot)");
            };
            let Some(vectors) = vectors.clone().or_else(|| settings.paths.entity_vectors.clone())
            else {
                return config_error("missing --vectors (or [paths].entity_vectors)");
            };
            let Some(ids) = ids.clone().or_else(|| settings.paths.entity_ids.clone()) else {
                return config_error("missing --ids (or [paths].entity_ids)");
            };
            let store = match snapshot::load(&snap_path) {
                Ok(s) => s,
                Err(e) => return config_error(e),
            };
            // Entities embed as "name: description"; row ids are the source
            // ids, which is what seed lookup resolves against the store.
            let mut texts = Vec::with_capacity(store.entity_count());
            let mut row_ids = Vec::with_capacity(store.entity_count());
            for (_, entity) in store.entities() {
                texts.push(format!("{}: {}", entity.canonical_name(), entity.description));
                row_ids.push(entity.ext_id.clone());
            }
            build_and_write(&texts, row_ids, dim.unwrap_or(settings.embed_dim), &vectors, &ids)?;
            println!(
                "embedded {} entities at dim {} -> {}",
                store.entity_count(),
                dim.unwrap_or(settings.embed_dim),
                vectors.display()
            );
            Ok(EXIT_OK)
        }
        IndexCmd::Validate { vectors, ids, manifest } => {
            let matrix = match build_index(vectors, ids) {
                Ok(m) => m,
                Err(e) => return config_error(format!("{}: {e}", vectors.display())),
            };
            let manifest_path = manifest.clone().unwrap_or_else(|| {
                let mut name = vectors.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                vectors.with_file_name(name)
            });
            let json = serde_json::json!({
                "vectors": vectors,
                "ids": ids,
                "count": matrix.count(),
                "dim": matrix.dim(),
                "vectors_sha256": file_sha256(vectors)?,
                "ids_sha256": file_sha256(ids)?,
            });
            std::fs::write(&manifest_path, format!("{json:#}\n"))
                .with_context(|| format!("writing manifest {}", manifest_path.display()))?;
            println!(
                "ok: {} rows x {} dims; manifest in {}",
                matrix.count(),
                matrix.dim(),
                manifest_path.display()
            );
            Ok(EXIT_OK)
        }
    }
}

fn build_and_write(
    texts: &[String],
    row_ids: Vec<String>,
    dim: usize,
    vectors_path: &Path,
    ids_path: &Path,
) -> Result<()> {
    let embedder = HashEmbedder::new(dim);
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let rows = embedder.embed(&refs).context("embedding")?;
    let matrix = EmbeddingMatrix::new(dim, row_ids, rows).context("assembling matrix")?;
    write_index(&matrix, vectors_path, ids_path)
        .with_context(|| format!("writing {}", vectors_path.display()))?;
    Ok(())
}

//! `spq run` — execute a question batch through a pipeline mode.
//!
//! Artifacts land in a fresh timestamped directory under `--out`:
//! `effective-config.json`, then per activation depth `sessions[-rN].jsonl`,
//! `predictions[-rN].jsonl` and `failures[-rN].jsonl` (suffixes only for
//! `--rounds a..b` sweeps). Per-session failures are recorded and skipped;
//! only systemic problems (unreadable resources, no gateway) fail the
//! command.

use std::path::PathBuf;

use anyhow::{Context, Result};
use spq_core::activation::ActivationConfig;
use spq_core::index::embed::{EmbedClient, HashEmbedder, MapEmbedder};
use spq_core::index::{build_index, load_corpus, Corpus, EmbeddingMatrix};
use spq_core::kg::{snapshot, KgStore};
use spq_core::pipeline::{load_batch, run_batch, Mode, PipelineConfig, Resources, SessionRecord};

use super::{config_error, make_gateway, make_run_dir, no_data, write_jsonl, EXIT_OK};
use crate::config::Settings;

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Batch input JSONL ({"id","question","answers":[...]}).
    #[arg(long, value_name = "FILE")]
    batch: PathBuf,

    /// KG snapshot (kg_infused mode).
    #[arg(long, value_name = "FILE")]
    snapshot: Option<PathBuf>,

    /// Passage corpus JSONL (retrieval modes).
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,

    /// Corpus vectors file.
    #[arg(long, value_name = "FILE")]
    corpus_vectors: Option<PathBuf>,

    /// Corpus ids file.
    #[arg(long, value_name = "FILE")]
    corpus_ids: Option<PathBuf>,

    /// Entity vectors file (kg_infused mode).
    #[arg(long, value_name = "FILE")]
    entity_vectors: Option<PathBuf>,

    /// Entity ids file (kg_infused mode).
    #[arg(long, value_name = "FILE")]
    entity_ids: Option<PathBuf>,

    /// JSON {text: [f32...]} query-embedding map for exact offline replay;
    /// without it queries embed through the hash embedder.
    #[arg(long, value_name = "FILE")]
    embed_map: Option<PathBuf>,

    /// Hash-embedder dimensionality (default: the corpus index's).
    #[arg(long)]
    embed_dim: Option<usize>,

    /// Stop after this many batch items.
    #[arg(long)]
    limit: Option<usize>,
}

struct Loaded {
    store: Option<KgStore>,
    entity_index: Option<EmbeddingMatrix>,
    corpus: Option<Corpus>,
    corpus_index: Option<EmbeddingMatrix>,
    embedder: Box<dyn EmbedClient>,
}

fn load_resources(args: &RunArgs, settings: &Settings, mode: Mode) -> Result<Loaded, String> {
    let wants_retrieval = mode != Mode::Nor;
    let wants_kg = mode == Mode::KgInfused;
    let paths = &settings.paths;

    let mut loaded = Loaded {
        store: None,
        entity_index: None,
        corpus: None,
        corpus_index: None,
        embedder: Box::new(HashEmbedder::new(settings.embed_dim)),
    };

    if wants_retrieval {
        let corpus_path = args
            .corpus
            .clone()
            .or_else(|| paths.corpus.clone())
            .ok_or("missing --corpus (or [paths].corpus)")?;
        let vectors = args
            .corpus_vectors
            .clone()
            .or_else(|| paths.corpus_vectors.clone())
            .ok_or("missing --corpus-vectors (or [paths].corpus_vectors)")?;
        let ids = args
            .corpus_ids
            .clone()
            .or_else(|| paths.corpus_ids.clone())
            .ok_or("missing --corpus-ids (or [paths].corpus_ids)")?;
        loaded.corpus =
            Some(load_corpus(&corpus_path).map_err(|e| format!("corpus: {e}"))?);
        loaded.corpus_index =
            Some(build_index(&vectors, &ids).map_err(|e| format!("corpus index: {e}"))?);
    }

    if wants_kg {
        let snap = args
            .snapshot
            .clone()
            .or_else(|| paths.snapshot.clone())
            .ok_or("missing --snapshot (or [paths].snapshot)")?;
        let vectors = args
            .entity_vectors
            .clone()
            .or_else(|| paths.entity_vectors.clone())
            .ok_or("missing --entity-vectors (or [paths].entity_vectors)")?;
        let ids = args
            .entity_ids
            .clone()
            .or_else(|| paths.entity_ids.clone())
            .ok_or("missing --entity-ids (or [paths].entity_ids)")?;
        loaded.store = Some(snapshot::load(&snap).map_err(|e| format!("snapshot: {e}"))?);
        loaded.entity_index =
            Some(build_index(&vectors, &ids).map_err(|e| format!("entity index: {e}"))?);
    }

    let map_path = args.embed_map.clone().or_else(|| paths.embed_map.clone());
    loaded.embedder = match map_path {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| format!("embed map {}: {e}", path.display()))?;
            let entries: std::collections::HashMap<String, Vec<f32>> =
                serde_json::from_str(&text)
                    .map_err(|e| format!("embed map {}: {e}", path.display()))?;
            let mut m = MapEmbedder::new();
            for (k, v) in entries {
                m.insert(k, v);
            }
            Box::new(m)
        }
        None => {
            // Query vectors must live in the same space as the index rows.
            let dim = args
                .embed_dim
                .or_else(|| loaded.corpus_index.as_ref().map(|m| m.dim()))
                .or_else(|| loaded.entity_index.as_ref().map(|m| m.dim()))
                .unwrap_or(settings.embed_dim);
            for (name, index) in [
                ("corpus", loaded.corpus_index.as_ref()),
                ("entity", loaded.entity_index.as_ref()),
            ] {
                if let Some(m) = index {
                    if m.dim() != dim {
                        return Err(format!(
                            "embed dim {dim} does not match the {name} index's {}",
                            m.dim()
                        ));
                    }
                }
            }
            Box::new(HashEmbedder::new(dim))
        }
    };
    Ok(loaded)
}

#[derive(serde::Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    answer: &'a str,
}

#[derive(serde::Serialize)]
struct FailureLine<'a> {
    id: &'a str,
    stage: String,
    message: &'a str,
}

pub fn run(args: &RunArgs, settings: &Settings) -> Result<i32> {
    let mode = settings.mode;
    let mut items = match load_batch(&args.batch) {
        Ok(items) => items,
        Err(e) => return config_error(format!("batch {}: {e}", args.batch.display())),
    };
    if let Some(limit) = args.limit {
        items.truncate(limit);
    }
    if items.is_empty() {
        return no_data(format!("batch {} has no items", args.batch.display()));
    }

    let loaded = match load_resources(args, settings, mode) {
        Ok(l) => l,
        Err(msg) => return config_error(msg),
    };
    let gateway = match make_gateway(settings) {
        Ok(g) => g,
        Err(msg) => return config_error(msg),
    };
    let res = Resources {
        store: loaded.store.as_ref(),
        entity_index: loaded.entity_index.as_ref(),
        corpus: loaded.corpus.as_ref(),
        corpus_index: loaded.corpus_index.as_ref(),
        embedder: loaded.embedder.as_ref(),
        gateway: gateway.as_ref(),
    };

    let run_dir = make_run_dir(&settings.out, &mode.to_string())?;
    std::fs::write(
        run_dir.join("effective-config.json"),
        format!("{:#}\n", settings.effective_json()),
    )
    .context("writing effective config")?;

    let sweep = settings.rounds.is_sweep();
    for depth in settings.rounds.depths() {
        let cfg = PipelineConfig {
            activation: ActivationConfig { max_rounds: depth, ..settings.activation },
            plan: settings.plan,
        };
        let records: Vec<SessionRecord> = run_batch(&items, mode, &cfg, &res);

        let suffix = if sweep { format!("-r{depth}") } else { String::new() };
        write_jsonl(&run_dir.join(format!("sessions{suffix}.jsonl")), &records)?;

        let predictions: Vec<PredictionLine> = records
            .iter()
            .filter_map(|r| {
                r.session
                    .answer
                    .as_deref()
                    .map(|answer| PredictionLine { id: &r.id, answer })
            })
            .collect();
        write_jsonl(&run_dir.join(format!("predictions{suffix}.jsonl")), &predictions)?;

        let failures: Vec<FailureLine> = records
            .iter()
            .filter_map(|r| {
                r.session.error.as_ref().map(|f| FailureLine {
                    id: &r.id,
                    stage: f.stage.as_str().to_string(),
                    message: &f.message,
                })
            })
            .collect();
        write_jsonl(&run_dir.join(format!("failures{suffix}.jsonl")), &failures)?;

        println!(
            "depth {depth}: {} items, {} answered, {} failed",
            records.len(),
            predictions.len(),
            failures.len()
        );
    }
    println!("artifacts in {}", run_dir.display());
    Ok(EXIT_OK)
}

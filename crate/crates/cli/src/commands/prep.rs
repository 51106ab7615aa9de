//! `spq prep` — filter a raw four-file KG dump into a loadable snapshot.

use std::path::PathBuf;

use anyhow::{Context, Result};
use spq_core::kg::load::load_raw;
use spq_core::kg::{filter_complete, snapshot, KgError};

use super::{config_error, no_data, EXIT_OK};
use crate::config::Settings;

#[derive(Debug, clap::Args)]
pub struct PrepArgs {
    /// Raw triples TSV (head<TAB>relation<TAB>tail ids).
    #[arg(long, value_name = "FILE")]
    triples: Option<PathBuf>,

    /// Entity names TSV (id<TAB>name...).
    #[arg(long, value_name = "FILE")]
    entities: Option<PathBuf>,

    /// Relation names TSV (id<TAB>name...).
    #[arg(long, value_name = "FILE")]
    relations: Option<PathBuf>,

    /// Entity descriptions TSV (id<TAB>text, first tab splits).
    #[arg(long, value_name = "FILE")]
    descriptions: Option<PathBuf>,

    /// Snapshot output path.
    #[arg(long, value_name = "FILE")]
    snapshot: Option<PathBuf>,

    /// Filter-stats JSON output (default: <snapshot>.stats.json).
    #[arg(long, value_name = "FILE")]
    stats: Option<PathBuf>,

    /// Rebuild even when the snapshot already exists.
    #[arg(long)]
    force: bool,
}

pub fn run(args: &PrepArgs, settings: &Settings) -> Result<i32> {
    let paths = &settings.paths;
    let need = |flag: Option<&PathBuf>, cfg: Option<&PathBuf>, name: &str| {
        flag.or(cfg).cloned().ok_or_else(|| format!("missing --{name} (or [paths].kg_{name})"))
    };
    let resolved = (|| -> Result<_, String> {
        Ok((
            need(args.triples.as_ref(), paths.kg_triples.as_ref(), "triples")?,
            need(args.entities.as_ref(), paths.kg_entities.as_ref(), "entities")?,
            need(args.relations.as_ref(), paths.kg_relations.as_ref(), "relations")?,
            need(args.descriptions.as_ref(), paths.kg_descriptions.as_ref(), "descriptions")?,
            args.snapshot
                .clone()
                .or_else(|| paths.snapshot.clone())
                .ok_or("missing --snapshot (or [paths].snapshot)")?,
        ))
    })();
    let (triples, entities, relations, descriptions, snapshot_path) = match resolved {
        Ok(v) => v,
        Err(msg) => return config_error(msg),
    };

    if snapshot_path.exists() && !args.force {
        println!(
            "snapshot {} already exists; nothing to do (pass --force to rebuild)",
            snapshot_path.display()
        );
        return Ok(EXIT_OK);
    }

    let raw = match load_raw(&triples, &entities, &relations, &descriptions) {
        Ok(raw) => raw,
        Err(e @ KgError::Malformed { .. }) => return config_error(e),
        Err(e) => return Err(e).context("loading raw KG"),
    };
    let dangling = raw.dangling_dropped;

    let store = match filter_complete(raw) {
        Ok(store) => store,
        Err(KgError::EmptyAfterFilter) => {
            return no_data("every entity was removed by the completeness filter")
        }
        Err(e) => return Err(e).context("filtering KG"),
    };

    snapshot::save(&store, &snapshot_path)
        .with_context(|| format!("writing snapshot {}", snapshot_path.display()))?;

    let stats_path = args.stats.clone().unwrap_or_else(|| {
        let mut name = snapshot_path.file_name().unwrap_or_default().to_os_string();
        name.push(".stats.json");
        snapshot_path.with_file_name(name)
    });
    let s = &store.stats;
    let stats_json = serde_json::json!({
        "entities_in": s.entities_in,
        "entities_out": s.entities_out,
        "relations_in": s.relations_in,
        "relations_out": s.relations_out,
        "triples_in": s.triples_in,
        "triples_out": s.triples_out,
        "dangling_triples_dropped": dangling,
        "entity_removal_fraction": s.entity_removal_fraction(),
        "relation_removal_fraction": s.relation_removal_fraction(),
        "triple_removal_fraction": s.triple_removal_fraction(),
    });
    std::fs::write(&stats_path, format!("{stats_json:#}\n"))
        .with_context(|| format!("writing stats {}", stats_path.display()))?;

    println!(
        "snapshot {}: {} entities, {} relations, {} triples (from {}/{}/{}); stats in {}",
        snapshot_path.display(),
        s.entities_out,
        s.relations_out,
        s.triples_out,
        s.entities_in,
        s.relations_in,
        s.triples_in,
        stats_path.display()
    );
    Ok(EXIT_OK)
}

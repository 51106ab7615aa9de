//! `spq eval` — score a predictions file against gold answers and print the
//! accuracy / token-F1 / exact-match / average row (×100, one decimal).

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use spq_core::eval::{evaluate, load_examples, load_predictions, recall_at_k, EvalError};
use spq_core::pipeline::SessionRecord;

use super::{config_error, no_data, EXIT_OK};
use crate::config::Settings;

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Gold examples JSONL ({"id","question","answers":[...],
    /// optional "gold_passage_ids":[...]}).
    #[arg(long, value_name = "FILE")]
    examples: PathBuf,

    /// Predictions JSONL ({"id","answer"}).
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,

    /// Sessions JSONL from `spq run`, for retrieval recall against
    /// gold_passage_ids.
    #[arg(long, value_name = "FILE")]
    sessions: Option<PathBuf>,

    /// k for recall@k (default: the configured retrieval budget).
    #[arg(long)]
    recall_k: Option<usize>,

    /// Write the full JSON report here.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

fn retrieved_ids(path: &PathBuf) -> Result<HashMap<String, Vec<String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SessionRecord = serde_json::from_str(line)
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        let ids: Vec<String> =
            record.session.retrieved.iter().map(|r| r.hit.id.clone()).collect();
        out.insert(record.id, ids);
    }
    Ok(out)
}

pub fn run(args: &EvalArgs, settings: &Settings) -> Result<i32> {
    let examples = match load_examples(&args.examples) {
        Ok(v) => v,
        Err(e) => return config_error(format!("{}: {e}", args.examples.display())),
    };
    let predictions = match load_predictions(&args.predictions) {
        Ok(v) => v,
        Err(e) => return config_error(format!("{}: {e}", args.predictions.display())),
    };
    let report = match evaluate(&examples, &predictions) {
        Ok(r) => r,
        Err(EvalError::EmptyBatch) => return no_data("no examples to score"),
        Err(e) => return config_error(e),
    };

    let recall = match &args.sessions {
        Some(path) => {
            let retrieved = match retrieved_ids(path) {
                Ok(r) => r,
                Err(msg) => return config_error(msg),
            };
            let k = args.recall_k.unwrap_or(settings.plan.k_p);
            recall_at_k(&examples, &retrieved, k).map(|r| (k, r))
        }
        None => None,
    };

    let x100 = |v: f64| (v * 1000.0).round() / 10.0;
    println!("Acc    F1     EM     Avg");
    println!(
        "{:<6.1} {:<6.1} {:<6.1} {:<6.1}",
        x100(report.acc),
        x100(report.f1),
        x100(report.em),
        x100(report.avg)
    );
    println!("examples: {}", report.examples.len());
    println!("missing predictions: {}", report.missing_predictions);
    if let Some((k, r)) = recall {
        println!("R@{k}: {:.1}", x100(r));
    }

    if let Some(path) = &args.report {
        let mut json = report.to_json();
        if let Some((k, r)) = recall {
            json["recall"] = serde_json::json!({ "k": k, "value": r, "x100": x100(r) });
        }
        std::fs::write(path, format!("{json:#}\n"))
            .with_context(|| format!("writing report {}", path.display()))?;
        println!("report in {}", path.display());
    }
    Ok(EXIT_OK)
}

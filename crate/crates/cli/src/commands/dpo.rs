//! `spq dpo-sample` — drive preference-dataset construction from
//! knowledge-augmentation inputs.
//!
//! The dataset path is stable (no timestamped dir) because interrupted runs
//! resume against it: `--resume` keeps the existing file and cursor, the
//! default starts clean.

use std::io::BufRead;
use std::path::PathBuf;

use anyhow::{Context, Result};
use spq_core::dpo::{build_dataset, DpoInput, SamplingGrid};

use super::{config_error, make_gateway, no_data, EXIT_OK};
use crate::config::Settings;

#[derive(Debug, clap::Args)]
pub struct DpoArgs {
    /// Inputs JSONL ({"question","passage_note","facts_summary","round"}).
    #[arg(long, value_name = "FILE")]
    inputs: PathBuf,

    /// Dataset output JSONL (default: <out>/dpo-dataset.jsonl).
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,

    /// Stop once the dataset holds this many examples.
    #[arg(long)]
    target: Option<usize>,

    /// Continue from the existing cursor instead of starting over.
    #[arg(long)]
    resume: bool,
}

fn load_inputs(path: &PathBuf) -> Result<Vec<DpoInput>, String> {
    let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let input: DpoInput = serde_json::from_str(&line)
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        out.push(input);
    }
    Ok(out)
}

pub fn run(args: &DpoArgs, settings: &Settings) -> Result<i32> {
    let inputs = match load_inputs(&args.inputs) {
        Ok(v) => v,
        Err(msg) => return config_error(msg),
    };
    if inputs.is_empty() {
        return no_data(format!("inputs file {} is empty", args.inputs.display()));
    }

    let dataset = match &args.dataset {
        Some(p) => p.clone(),
        None => {
            std::fs::create_dir_all(&settings.out)
                .with_context(|| format!("creating {}", settings.out.display()))?;
            settings.out.join("dpo-dataset.jsonl")
        }
    };
    if !args.resume {
        let mut cursor = dataset.file_name().unwrap_or_default().to_os_string();
        cursor.push(".cursor");
        let _ = std::fs::remove_file(dataset.with_file_name(cursor));
        let _ = std::fs::remove_file(&dataset);
    }

    let gateway = match make_gateway(settings) {
        Ok(g) => g,
        Err(msg) => return config_error(msg),
    };

    let grid = SamplingGrid::default();
    let report = build_dataset(&inputs, &grid, gateway.as_ref(), args.target, &dataset)
        .context("building preference dataset")?;

    println!(
        "processed {} inputs (resumed from {}): {} examples, {} ambiguous, {} discarded sets",
        report.inputs_processed,
        report.resumed_from,
        report.emitted,
        report.ambiguous,
        report.discarded_sets
    );
    let total: usize = std::fs::read_to_string(&dataset)
        .map(|t| t.lines().filter(|l| !l.trim().is_empty()).count())
        .unwrap_or(0);
    if total == 0 {
        return no_data("every judgment was filtered out; the dataset is empty");
    }
    println!("dataset: {} examples in {}", total, dataset.display());
    Ok(EXIT_OK)
}

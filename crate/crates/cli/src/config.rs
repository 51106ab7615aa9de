//! Layered configuration: CLI flag > `SPQ_*` environment variable > config
//! file > built-in default.
//!
//! The config file is TOML with `[paths]`, `[activation]`, `[retrieval]`,
//! `[gateway]` and `[run]` tables, every field optional. Whatever wins is
//! recorded in the effective-config JSON each run writes, so any run can be
//! reproduced from its artifacts alone.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use spq_core::activation::ActivationConfig;
use spq_core::pipeline::{Mode, RetrievalPlan};

#[derive(Debug, Default, Clone, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub paths: PathsSection,
    pub activation: ActivationSection,
    pub retrieval: RetrievalSection,
    pub gateway: GatewaySection,
    pub run: RunSection,
}

/// Artifact locations. Subcommand flags override these one by one.
#[derive(Debug, Default, Clone, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub kg_triples: Option<PathBuf>,
    pub kg_entities: Option<PathBuf>,
    pub kg_relations: Option<PathBuf>,
    pub kg_descriptions: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub corpus_vectors: Option<PathBuf>,
    pub corpus_ids: Option<PathBuf>,
    pub entity_vectors: Option<PathBuf>,
    pub entity_ids: Option<PathBuf>,
    /// JSON `{text: [f32...]}` map for exact offline query embedding.
    pub embed_map: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationSection {
    pub k_e: Option<usize>,
    pub max_entities_per_round: Option<usize>,
    pub max_triples_per_entity: Option<usize>,
}

#[derive(Debug, Default, Clone, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k_p: Option<usize>,
}

/// Live-endpoint settings; ignored entirely under `--mock`.
#[derive(Debug, Default, Clone, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_attempts: Option<u32>,
    pub initial_backoff_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Default, Clone, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Option<String>,
    pub rounds: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub embed_dim: Option<usize>,
}

/// Reads the config file; `None` means "defaults only". A path that does not
/// exist is an error only when given explicitly.
pub fn load_file(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
}

/// Activation depth request: one depth, or an inclusive sweep `a..b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundsSpec {
    Single(usize),
    Sweep(usize, usize),
}

impl RoundsSpec {
    pub fn depths(&self) -> Vec<usize> {
        match *self {
            RoundsSpec::Single(n) => vec![n],
            RoundsSpec::Sweep(a, b) => (a..=b).collect(),
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self, RoundsSpec::Sweep(..))
    }
}

impl FromStr for RoundsSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_depth = |part: &str| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| format!("invalid round count {part:?}"))
                .and_then(|n| if n == 0 { Err("rounds start at 1".to_string()) } else { Ok(n) })
        };
        match s.split_once("..") {
            None => Ok(RoundsSpec::Single(parse_depth(s)?)),
            Some((a, b)) => {
                let (a, b) = (parse_depth(a)?, parse_depth(b)?);
                if a > b {
                    return Err(format!("sweep {a}..{b} runs backwards"));
                }
                Ok(RoundsSpec::Sweep(a, b))
            }
        }
    }
}

impl std::fmt::Display for RoundsSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            RoundsSpec::Single(n) => write!(f, "{n}"),
            RoundsSpec::Sweep(a, b) => write!(f, "{a}..{b}"),
        }
    }
}

/// Global CLI flags, already parsed by clap.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub mock: Option<PathBuf>,
    pub seed: Option<u64>,
    pub rounds: Option<String>,
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
}

fn env_var(key: &str) -> Option<String> {
    std::env::var(format!("SPQ_{key}")).ok().filter(|v| !v.is_empty())
}

/// CLI > env > file > default, parsing string sources with `FromStr`.
fn pick<T: FromStr>(
    cli: Option<&str>,
    env_key: &str,
    file: Option<&str>,
    default: T,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let (source, value) = if let Some(v) = cli {
        ("flag", v.to_string())
    } else if let Some(v) = env_var(env_key) {
        (env_key, v)
    } else if let Some(v) = file {
        ("config file", v.to_string())
    } else {
        return Ok(default);
    };
    match value.parse() {
        Ok(v) => Ok(v),
        Err(e) => bail!("invalid {source} value {value:?}: {e}"),
    }
}

fn pick_path(cli: Option<PathBuf>, env_key: &str, file: Option<PathBuf>) -> Option<PathBuf> {
    cli.or_else(|| env_var(env_key).map(PathBuf::from)).or(file)
}

/// Everything a subcommand needs, with the layering already applied.
#[derive(Debug, Clone)]
pub struct Settings {
    pub mode: Mode,
    pub rounds: RoundsSpec,
    pub out: PathBuf,
    pub seed: u64,
    pub mock: Option<PathBuf>,
    pub activation: ActivationConfig,
    pub plan: RetrievalPlan,
    pub gateway: GatewaySection,
    pub paths: PathsSection,
    pub embed_dim: usize,
}

impl Settings {
    pub fn resolve(cli: &Overrides, file: &FileConfig) -> Result<Self> {
        let mode = pick(cli.mode.as_deref(), "MODE", file.run.mode.as_deref(), Mode::KgInfused)?;
        let rounds: RoundsSpec = pick(
            cli.rounds.as_deref(),
            "ROUNDS",
            file.run.rounds.as_deref(),
            RoundsSpec::Single(ActivationConfig::default().max_rounds),
        )?;
        let out = pick_path(cli.out.clone(), "OUT", file.run.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        let seed = pick(
            cli.seed.map(|s| s.to_string()).as_deref(),
            "SEED",
            file.run.seed.map(|s| s.to_string()).as_deref(),
            0u64,
        )?;
        let mock = pick_path(cli.mock.clone(), "MOCK", None);

        let defaults = ActivationConfig::default();
        let activation = ActivationConfig {
            k_e: file.activation.k_e.unwrap_or(defaults.k_e),
            // Depth comes from --rounds; per-depth values are set at use.
            max_rounds: defaults.max_rounds,
            max_entities_per_round: file
                .activation
                .max_entities_per_round
                .unwrap_or(defaults.max_entities_per_round),
            max_triples_per_entity: file
                .activation
                .max_triples_per_entity
                .unwrap_or(defaults.max_triples_per_entity),
        };
        let plan = RetrievalPlan { k_p: file.retrieval.k_p.unwrap_or(RetrievalPlan::default().k_p) };

        let mut gateway = file.gateway.clone();
        if let Some(url) = env_var("BASE_URL") {
            gateway.base_url = Some(url);
        }
        if let Some(model) = env_var("MODEL") {
            gateway.model = Some(model);
        }

        let embed_dim =
            pick(None, "EMBED_DIM", file.run.embed_dim.map(|d| d.to_string()).as_deref(), 64)?;

        Ok(Settings {
            mode,
            rounds,
            out,
            seed,
            mock,
            activation,
            plan,
            gateway,
            paths: file.paths.clone(),
            embed_dim,
        })
    }

    /// The exact knobs this invocation ran with, for the run-dir dump.
    pub fn effective_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode.to_string(),
            "rounds": self.rounds.to_string(),
            "out": self.out,
            "seed": self.seed,
            "mock": self.mock,
            "activation": self.activation,
            "retrieval": { "k_p": self.plan.k_p },
            "gateway": self.gateway,
            "paths": self.paths,
            "embed_dim": self.embed_dim,
        })
    }
}

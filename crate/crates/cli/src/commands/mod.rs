//! Subcommand implementations.
//!
//! Commands return their exit code: 0 success, 1 runtime failure (as an
//! `Err`), 2 invalid configuration or corrupt artifact, 3 no data. Codes 2
//! and 3 print their own message and come back as `Ok`, so only genuinely
//! unexpected failures travel the error path.

pub mod dpo;
pub mod eval;
pub mod index;
pub mod prep;
pub mod run;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use spq_core::gateway::live::{LiveConfig, LiveGateway};
use spq_core::gateway::mock::MockGateway;
use spq_core::gateway::Gateway;

use crate::config::Settings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_DATA: i32 = 3;

/// Reports a configuration problem and yields exit code 2.
pub fn config_error(e: impl std::fmt::Display) -> Result<i32> {
    eprintln!("error: {e:#}");
    Ok(EXIT_CONFIG)
}

/// Reports an empty work set and yields exit code 3.
pub fn no_data(msg: impl std::fmt::Display) -> Result<i32> {
    eprintln!("no data: {msg}");
    Ok(EXIT_NO_DATA)
}

/// The transcript gateway under `--mock`, otherwise a live client built
/// from `[gateway]` settings. `Err(2)` (as a message) when neither is
/// configured.
pub fn make_gateway(settings: &Settings) -> Result<Box<dyn Gateway>, String> {
    if let Some(path) = &settings.mock {
        let gw = MockGateway::from_file(path)
            .map_err(|e| format!("loading transcript {}: {e}", path.display()))?;
        return Ok(Box::new(gw));
    }
    let Some(base_url) = settings.gateway.base_url.clone() else {
        return Err("no gateway: pass --mock <transcript> or set [gateway].base_url".to_string());
    };
    let defaults = LiveConfig::default();
    let api_key = settings
        .gateway
        .api_key_env
        .as_deref()
        .and_then(|var| std::env::var(var).ok())
        .unwrap_or_default();
    let cfg = LiveConfig {
        base_url,
        model: settings.gateway.model.clone().unwrap_or_default(),
        api_key,
        max_attempts: settings.gateway.max_attempts.unwrap_or(defaults.max_attempts),
        initial_backoff_ms: settings
            .gateway
            .initial_backoff_ms
            .unwrap_or(defaults.initial_backoff_ms),
        max_in_flight: settings.gateway.max_in_flight.unwrap_or(defaults.max_in_flight),
        timeout_secs: settings.gateway.timeout_secs.unwrap_or(defaults.timeout_secs),
    };
    LiveGateway::new(cfg).map(|g| Box::new(g) as Box<dyn Gateway>).map_err(|e| e.to_string())
}

/// Creates `<root>/<timestamp>-<label>/` and repoints `<root>/latest` at it.
pub fn make_run_dir(root: &Path, label: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root)
        .with_context(|| format!("creating output root {}", root.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let mut name = format!("{stamp}-{label}");
    let mut dir = root.join(&name);
    // Same-millisecond collisions get a numeric suffix.
    for n in 1.. {
        match std::fs::create_dir(&dir) {
            Ok(()) => break,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                name = format!("{stamp}-{label}.{n}");
                dir = root.join(&name);
            }
            Err(e) => {
                return Err(e).with_context(|| format!("creating run dir {}", dir.display()))
            }
        }
    }
    let latest = root.join("latest");
    #[cfg(unix)]
    {
        let _ = std::fs::remove_file(&latest);
        std::os::unix::fs::symlink(&name, &latest)
            .with_context(|| format!("linking {}", latest.display()))?;
    }
    Ok(dir)
}

/// Writes serializable records as one JSON object per line.
pub fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of a file, for index manifests.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

//! Experiment log: one JSON line per invocation in the output directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use crate::config::Resolved;
use crate::CliResult;

pub const EXPERIMENT_LOG: &str = "experiments.jsonl";

pub const BUILD_ID: &str = env!("VDGNS_BUILD_ID");

pub fn append(dir: &Path, subcommand: &str, resolved: &Resolved, outputs: &[PathBuf]) -> CliResult<PathBuf> {
    let path = dir.join(EXPERIMENT_LOG);
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let line = json!({
        "timestamp": timestamp,
        "subcommand": subcommand,
        "resolved_config": resolved.to_json(),
        "output_paths": outputs,
        "git_or_build_id": BUILD_ID,
    });
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_err(&path, e))?;
    writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn io_err(path: &Path, source: std::io::Error) -> crate::CliError {
    vdgns::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

//! Atomic JSON and CSV outputs with embedded provenance.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use spde_holder_core::field::write_atomic;

use crate::run::RunError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes `{"config": ..., <body fields>}` atomically.
pub fn write_json<S: Serialize>(path: &Path, config: &serde_json::Value, body: &S) -> Result<PathBuf, RunError> {
    let mut doc = serde_json::Map::new();
    doc.insert("config".into(), config.clone());
    match serde_json::to_value(body).map_err(|e| io_err(path, e))? {
        serde_json::Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("data".into(), other);
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&serde_json::Value::Object(doc)).map_err(|e| io_err(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

/// CSV with a leading `# config: <json>` line.
pub fn write_csv(path: &Path, config: &serde_json::Value, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, RunError> {
    let mut text = format!("# config: {}\n{}\n", config, header.join(","));
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes()).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

pub fn read_json(path: &Path) -> Result<serde_json::Value, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Full-precision float formatting that round-trips.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

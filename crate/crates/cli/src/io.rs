use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use deconf::model::write_atomic;
use deconf::{Error, Result};
use serde::{Deserialize, Serialize};

pub const LEDGER_FILE: &str = "runs.jsonl";
pub const SPLITS_FILE: &str = "splits.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const CONFIG_FILE: &str = "config.resolved.json";

pub fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Data(format!("cannot create {}: {e}", p.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Sample ids of one training context, by role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

pub fn write_splits(dir: &Path, splits: &BTreeMap<String, SplitIds>) -> Result<()> {
    write_text(&dir.join(SPLITS_FILE), &serde_json::to_string_pretty(splits)?)
}

pub fn read_splits(dir: &Path) -> Result<BTreeMap<String, SplitIds>> {
    let p = dir.join(SPLITS_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::Data(format!("cannot read {}: {e}", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Directory holding a ledger; checkpoint paths in it are relative to this.
pub fn ledger_dir(ledger: &Path) -> PathBuf {
    ledger.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Replaces anything but ASCII alphanumerics, `-` and `_` with `_`.
pub fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

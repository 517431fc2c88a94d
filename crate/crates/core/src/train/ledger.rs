use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::probe::ProbeResult;
use super::run::{EpochMetrics, Predictions, RunRecord};
use crate::error::{Error, Result};
use crate::model::VariantSpec;

/// One line of a runs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub config_hash: String,
    pub fingerprint: String,
    pub label: String,
    pub spec: VariantSpec,
    pub seed: u64,
    /// Experiment-specific grouping such as a fold index or partition name.
    pub group: String,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochMetrics>,
    pub val_emotion_uar: f64,
    pub val_confound_uar: Option<f64>,
    pub test_emotion_uar: Option<f64>,
    pub checkpoint: Option<String>,
    /// Whether an adversarial run met the chance criterion; `None` for normal runs.
    pub admissible: Option<bool>,
    pub probe: Option<ProbeResult>,
    pub test: Predictions,
}

impl LedgerEntry {
    pub fn from_record(
        record: &RunRecord,
        config_hash: &str,
        group: &str,
        checkpoint: Option<String>,
    ) -> Result<Self> {
        let best = record.best();
        Ok(Self {
            config_hash: config_hash.to_string(),
            fingerprint: record.fingerprint().to_string(),
            label: record.spec.label(),
            spec: record.spec.clone(),
            seed: record.seed,
            group: group.to_string(),
            best_epoch: record.best_epoch,
            stopped_early: record.stopped_early,
            history: record.history.clone(),
            val_emotion_uar: best.val_emotion_uar,
            val_confound_uar: best.val_confound_uar,
            test_emotion_uar: if record.test.is_empty() {
                None
            } else {
                Some(record.test.emotion_uar()?)
            },
            checkpoint,
            admissible: None,
            probe: None,
            test: record.test.clone(),
        })
    }
}

pub fn ledger_line(entry: &LedgerEntry) -> Result<String> {
    Ok(serde_json::to_string(entry)?)
}

pub fn append_ledger(path: impl AsRef<Path>, entry: &LedgerEntry) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", ledger_line(entry)?)?;
    Ok(())
}

pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<LedgerEntry>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: LedgerEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if e.spec.fingerprint() != e.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: e.spec.fingerprint(),
                found: e.fingerprint,
            });
        }
        out.push(e);
    }
    Ok(out)
}

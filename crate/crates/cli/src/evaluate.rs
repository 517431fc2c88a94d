use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use deconf::eval::{check_modality, cross_domain_eval, render_transfer_table, TransferMode, UarReport};
use deconf::features::EmbeddingTable;
use deconf::model::{load_checkpoint, EmotionTarget, Modality, NetworkParams};
use deconf::train::{read_ledger, LedgerEntry};
use deconf::{Error, Result};

use crate::config::require_file;
use crate::io::{file_stem, ledger_dir, read_splits, write_jsonl, write_text};
use crate::prepare::load_target;

/// Groups runs that differ only in training mode.
pub fn family(e: &LedgerEntry) -> (EmotionTarget, Modality) {
    (e.spec.emotion_target, e.spec.modality)
}

pub fn family_name(f: (EmotionTarget, Modality)) -> String {
    format!("{}/{}", f.0.as_str(), modality_name(f.1))
}

pub fn modality_name(m: Modality) -> &'static str {
    match m {
        Modality::Acoustic => "acoustic",
        Modality::Lexical => "lexical",
        Modality::Multimodal => "multimodal",
    }
}

/// Scores every checkpointed run of a ledger on a target manifest and writes
/// one normal-versus-adversarial report per training context and model family.
pub fn cmd_evaluate(
    ledger: &Path,
    target_manifest: &Path,
    target_name: Option<&str>,
    embeddings: Option<&Path>,
    duration_filter: bool,
    out: &Path,
) -> Result<String> {
    require_file(ledger, "ledger")?;
    require_file(target_manifest, "target manifest")?;
    let entries = read_ledger(ledger)?;
    if entries.is_empty() {
        return Err(Error::Data(format!("{} holds no runs", ledger.display())));
    }
    let dir = ledger_dir(ledger);
    let splits = read_splits(&dir)?;
    let table = embeddings.map(EmbeddingTable::load).transpose()?;
    let name = target_name.map(str::to_string).unwrap_or_else(|| {
        target_manifest
            .file_stem()
            .map_or_else(|| "target".into(), |s| s.to_string_lossy().into_owned())
    });

    let mut models: BTreeMap<(String, (EmotionTarget, Modality)), Vec<(NetworkParams, u64)>> = BTreeMap::new();
    for e in &entries {
        let rel = e
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Data(format!("run {} seed {} has no checkpoint", e.label, e.seed)))?;
        let params = load_checkpoint(dir.join(rel), &e.spec)?;
        models.entry((e.group.clone(), family(e))).or_default().push((params, e.seed));
    }

    let targets: BTreeSet<EmotionTarget> = entries.iter().map(|e| e.spec.emotion_target).collect();
    let mut corpora = BTreeMap::new();
    for t in targets {
        corpora.insert(t, load_target(target_manifest, t, table.as_ref(), duration_filter)?);
    }
    // Refuse before scoring anything.
    for ((_, fam), runs) in &models {
        for (p, _) in runs {
            check_modality(p, &corpora[&fam.0].samples)?;
        }
    }

    let mut reports: Vec<UarReport> = Vec::new();
    for ((group, fam), runs) in &models {
        let ids = splits
            .get(group)
            .ok_or_else(|| Error::Data(format!("no split ids recorded for {group}")))?;
        let seen: BTreeSet<String> = ids.train.iter().chain(&ids.validation).cloned().collect();
        let refs: Vec<(&NetworkParams, u64)> = runs.iter().map(|(p, s)| (p, *s)).collect();
        let source = format!("{group} ({})", family_name(*fam));
        reports.push(cross_domain_eval(
            &refs,
            &source,
            &name,
            &corpora[&fam.0].samples,
            &seen,
            TransferMode::CrossCorpus,
        )?);
    }
    let stem = file_stem(&name);
    let text = render_transfer_table(&reports);
    write_jsonl(&out.join(format!("evaluate-{stem}.jsonl")), &reports)?;
    write_text(&out.join(format!("evaluate-{stem}.txt")), &text)?;
    Ok(text.trim_end().to_string())
}

use std::path::Path;

use deconf::data::{
    assign_labels, encode_feature_file, load_samples, manifest_to_string, read_manifest, FeatureSource, LoadOptions,
};
use deconf::features::{lexical_category_vector, CategoryLexicon, EmbeddingTable, LexicalFeatureVector, FEATURE_NAMES};
use deconf::model::{write_atomic, EmotionTarget};
use deconf::Result;
use serde::{Deserialize, Serialize};

use crate::config::require_file;
use crate::io::{ensure_dir, file_stem, write_jsonl, write_text};
use crate::synthesize::MANIFEST_FILE;

pub const LEXICAL_FEATURES_FILE: &str = "lexical_features.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalRow {
    pub id: String,
    pub features: LexicalFeatureVector,
}

/// Materializes acoustic features as feature files (MFBs z-normalized per
/// session for audio sources), writes the lexical category vectors, and
/// reports out-of-vocabulary rates against the word vectors.
pub fn cmd_featurize(
    manifest: &Path,
    embeddings: Option<&Path>,
    lexicon: Option<&Path>,
    out: &Path,
) -> Result<String> {
    require_file(manifest, "manifest")?;
    if let Some(e) = embeddings {
        require_file(e, "embeddings")?;
    }
    if let Some(l) = lexicon {
        require_file(l, "lexicon")?;
    }
    let mut utterances = read_manifest(manifest)?;
    let table = embeddings.map(EmbeddingTable::load).transpose()?;
    let lex = match lexicon {
        Some(p) => CategoryLexicon::load(p)?,
        None => CategoryLexicon::builtin(),
    };
    ensure_dir(out)?;

    let with_audio = utterances.iter().filter(|u| u.acoustic.is_some()).count();
    let acoustic = with_audio == utterances.len() && !utterances.is_empty();
    if acoustic {
        // Labels are irrelevant here; binning only has to succeed.
        let mean = utterances
            .iter()
            .filter_map(|u| match u.confound {
                deconf::data::ConfoundValue::Stress(s) => Some(s),
                _ => None,
            })
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        let mean = (mean.1 > 0).then(|| mean.0 / mean.1 as f64);
        let labels = assign_labels(&utterances, EmotionTarget::Activation, mean)?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let samples = load_samples(
            &utterances,
            &labels,
            base,
            LoadOptions {
                acoustic: true,
                embeddings: None,
            },
        )?;
        ensure_dir(&out.join("features"))?;
        for (u, s) in utterances.iter_mut().zip(&samples) {
            let t = s.acoustic.as_ref().expect("acoustic loaded");
            let rel = format!("features/{}.dcft", file_stem(&u.id));
            write_atomic(&out.join(&rel), &encode_feature_file(t)?)?;
            u.acoustic = Some(FeatureSource::Features(rel));
        }
    }

    let mut rows = Vec::new();
    let (mut tokens, mut oov) = (0usize, 0usize);
    for u in &utterances {
        if !u.has_transcript() {
            continue;
        }
        rows.push(LexicalRow {
            id: u.id.clone(),
            features: lexical_category_vector(&u.tokens, &lex, u.duration_s)?,
        });
        if let Some(t) = &table {
            tokens += u.tokens.len();
            oov += u.tokens.iter().filter(|w| !t.contains(w)).count();
        }
    }
    write_jsonl(&out.join(LEXICAL_FEATURES_FILE), &rows)?;
    write_text(&out.join(MANIFEST_FILE), &manifest_to_string(&utterances)?)?;
    let mut msg = format!(
        "featurized {} utterances ({} acoustic, {} with transcripts, {} lexical features) into {}",
        utterances.len(),
        if acoustic { with_audio } else { 0 },
        rows.len(),
        FEATURE_NAMES.len(),
        out.display()
    );
    if table.is_some() && tokens > 0 {
        msg.push_str(&format!("; oov rate {:.4}", oov as f64 / tokens as f64));
    }
    Ok(msg)
}

pub fn read_lexical_rows(path: &Path) -> Result<Vec<LexicalRow>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

use std::path::Path;

use deconf::data::{encode_feature_file, generate_synthetic_corpus, manifest_to_string, FeatureSource};
use deconf::model::write_atomic;
use deconf::Result;

use crate::config::ExperimentConfig;
use crate::io::{ensure_dir, file_stem, write_text};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const LEXICON_FILE: &str = "lexicon.txt";

/// Writes a synthetic corpus: manifest, one feature file per utterance, the
/// word vectors and the category lexicon.
pub fn cmd_synthesize(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.out_dir()?;
    let mut syn = cfg.synthetic.clone();
    syn.seed = cfg.seed;
    syn.validate()?;
    let corpus = generate_synthetic_corpus(&syn)?;
    let feat_dir = out.join("features");
    ensure_dir(&feat_dir)?;
    let mut utterances = corpus.utterances;
    for u in &mut utterances {
        if let Some(FeatureSource::Inline(t)) = &u.acoustic {
            let rel = format!("features/{}.dcft", file_stem(&u.id));
            write_atomic(&out.join(&rel), &encode_feature_file(t)?)?;
            u.acoustic = Some(FeatureSource::Features(rel));
        }
    }
    write_text(&out.join(MANIFEST_FILE), &manifest_to_string(&utterances)?)?;
    write_text(&out.join(EMBEDDINGS_FILE), &corpus.embeddings.to_text())?;
    write_text(&out.join(LEXICON_FILE), &corpus.lexicon.to_text())?;
    write_text(&out.join("synthetic.json"), &serde_json::to_string_pretty(&syn)?)?;
    Ok(format!(
        "synthesized {} utterances from {} speakers into {}",
        utterances.len(),
        syn.speakers,
        Path::new(out).display()
    ))
}

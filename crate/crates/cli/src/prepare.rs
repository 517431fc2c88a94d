use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use deconf::data::{
    assign_labels, bin_stress, filter_by_duration, load_samples, read_manifest, stress_population_mean, ConfoundValue,
    LoadOptions, Sample, Utterance, HIGH, LOW, MID,
};
use deconf::features::EmbeddingTable;
use deconf::model::{EmotionTarget, Modality};
use deconf::{Error, Result};

/// A manifest with its inputs materialized and labels for one emotion target.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    /// Aligned with `utterances`.
    pub samples: Vec<Sample>,
    pub confound_classes: usize,
}

pub fn confound_classes(utterances: &[Utterance]) -> Result<usize> {
    let kinds: BTreeSet<usize> = utterances.iter().map(|u| u.confound.num_classes()).collect();
    match kinds.len() {
        0 => Err(Error::Data("manifest is empty".into())),
        1 => Ok(*kinds.iter().next().expect("one kind")),
        _ => Err(Error::Data("manifest mixes stress and spontaneity confounds".into())),
    }
}

fn all_speakers(utterances: &[Utterance]) -> BTreeSet<String> {
    utterances.iter().map(|u| u.speaker_id.clone()).collect()
}

fn stress_mean(utterances: &[Utterance], speakers: &BTreeSet<String>) -> Result<Option<f64>> {
    if utterances.iter().any(|u| matches!(u.confound, ConfoundValue::Stress(_))) {
        Ok(Some(stress_population_mean(utterances, speakers)?))
    } else {
        Ok(None)
    }
}

/// Reads and loads a manifest. Stress levels are binned around the mean of
/// every speaker in it; use [`relabel_confound`] to narrow that population.
pub fn load_corpus(
    manifest: &Path,
    target: EmotionTarget,
    modality: Modality,
    embeddings: Option<&EmbeddingTable>,
    duration_filter: bool,
) -> Result<Corpus> {
    let mut utterances = read_manifest(manifest)?;
    if duration_filter {
        utterances = filter_by_duration(utterances);
    }
    let confound_classes = confound_classes(&utterances)?;
    let mean = stress_mean(&utterances, &all_speakers(&utterances))?;
    let labels = assign_labels(&utterances, target, mean)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let opts = LoadOptions {
        acoustic: modality.uses_acoustic(),
        embeddings: if modality.uses_lexical() {
            Some(embeddings.ok_or_else(|| Error::Config("lexical inputs need an embedding table".into()))?)
        } else {
            None
        },
    };
    let samples = load_samples(&utterances, &labels, base, opts)?;
    Ok(Corpus {
        utterances,
        samples,
        confound_classes,
    })
}

/// Loads whatever inputs a manifest can provide, for scoring models whose
/// modality is checked afterwards.
pub fn load_target(
    manifest: &Path,
    target: EmotionTarget,
    embeddings: Option<&EmbeddingTable>,
    duration_filter: bool,
) -> Result<Corpus> {
    let mut utterances = read_manifest(manifest)?;
    if duration_filter {
        utterances = filter_by_duration(utterances);
    }
    let confound_classes = confound_classes(&utterances)?;
    let mean = stress_mean(&utterances, &all_speakers(&utterances))?;
    let labels = assign_labels(&utterances, target, mean)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let opts = LoadOptions {
        acoustic: utterances.iter().all(|u| u.acoustic.is_some()),
        embeddings: embeddings.filter(|_| utterances.iter().all(|u| u.has_transcript())),
    };
    let samples = load_samples(&utterances, &labels, base, opts)?;
    Ok(Corpus {
        utterances,
        samples,
        confound_classes,
    })
}

/// Samples with stress levels re-binned around the mean of `speakers`.
pub fn relabel_confound(corpus: &Corpus, speakers: &BTreeSet<String>) -> Result<Vec<Sample>> {
    let Some(mean) = stress_mean(&corpus.utterances, speakers)? else {
        return Ok(corpus.samples.clone());
    };
    Ok(corpus
        .utterances
        .iter()
        .zip(&corpus.samples)
        .map(|(u, s)| {
            let mut s = s.clone();
            if let ConfoundValue::Stress(v) = u.confound {
                s.confound = bin_stress(v, mean);
            }
            s
        })
        .collect())
}

pub fn level_name(classes: usize, level: usize) -> String {
    match (classes, level) {
        (3, LOW) => "low".into(),
        (3, MID) => "mid".into(),
        (3, HIGH) => "high".into(),
        (2, 0) => "scripted".into(),
        (2, 1) => "improvised".into(),
        _ => level.to_string(),
    }
}

/// Input widths found in the data.
pub fn input_dims(samples: &[Sample]) -> (Option<usize>, Option<usize>) {
    let a = samples.iter().find_map(|s| s.acoustic.as_ref().map(|t| t.shape()[1]));
    let l = samples.iter().find_map(|s| s.lexical.as_ref().map(|t| t.shape()[1]));
    (a, l)
}

/// Emotion class counts, for logging.
pub fn class_counts(samples: &[Sample]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for s in samples {
        *m.entry(s.emotion).or_insert(0) += 1;
    }
    m
}

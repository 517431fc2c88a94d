use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::{bin_rating, bin_stress, duration_in_range, LabelBins, RatingScale};
use crate::error::{Error, Result};
use crate::features::{compute_mfb, embed_tokens, read_wav, znormalize, EmbeddingTable};
use crate::model::{EmotionTarget, ModelInput};
use crate::netcore::Tensor;

pub const FEATURE_MAGIC: &[u8; 8] = b"DCFT0001";

/// Where an utterance's acoustic frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Feature file relative to the manifest directory.
    Features(String),
    /// WAV file relative to the manifest directory; MFBs computed on load.
    Audio(String),
    Inline(Tensor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spontaneity {
    Scripted,
    Improvised,
}

/// Raw confound annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfoundValue {
    /// Adjusted perceived-stress sum of the recording session.
    Stress(f64),
    Spontaneity(Spontaneity),
}

impl ConfoundValue {
    pub fn num_classes(&self) -> usize {
        match self {
            ConfoundValue::Stress(_) => 3,
            ConfoundValue::Spontaneity(_) => 2,
        }
    }
}

/// One manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub session_id: String,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acoustic: Option<FeatureSource>,
    /// Empty when no transcript exists.
    #[serde(default)]
    pub tokens: Vec<String>,
    pub activation: f64,
    pub valence: f64,
    pub rating_scale: RatingScale,
    pub confound: ConfoundValue,
    pub corpus: String,
}

impl Utterance {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::Data(format!(
                "utterance {}: duration {} must be > 0",
                self.id, self.duration_s
            )));
        }
        bin_rating(self.rating_scale, self.activation)?;
        bin_rating(self.rating_scale, self.valence)?;
        if let ConfoundValue::Stress(s) = self.confound {
            if !s.is_finite() {
                return Err(Error::Data(format!("utterance {}: stress score not finite", self.id)));
            }
        }
        Ok(())
    }

    pub fn rating(&self, target: EmotionTarget) -> f64 {
        match target {
            EmotionTarget::Activation => self.activation,
            EmotionTarget::Valence => self.valence,
        }
    }

    pub fn has_transcript(&self) -> bool {
        !self.tokens.is_empty()
    }
}

/// Anything that belongs to a speaker; lets splitting work on raw records and
/// loaded samples alike.
pub trait SpeakerItem {
    fn item_id(&self) -> &str;
    fn speaker(&self) -> &str;
}

impl SpeakerItem for Utterance {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn speaker(&self) -> &str {
        &self.speaker_id
    }
}

pub fn filter_by_duration(utterances: Vec<Utterance>) -> Vec<Utterance> {
    utterances
        .into_iter()
        .filter(|u| duration_in_range(u.duration_s))
        .collect()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let u: Utterance = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        u.validate()?;
        if !seen.insert(u.id.clone()) {
            return Err(Error::Data(format!("duplicate utterance id {}", u.id)));
        }
        out.push(u);
    }
    Ok(out)
}

pub fn manifest_to_string(utterances: &[Utterance]) -> Result<String> {
    let mut s = String::new();
    for u in utterances {
        s.push_str(&serde_json::to_string(u)?);
        s.push('\n');
    }
    Ok(s)
}

/// Feature file: magic, `rows` and `cols` as u64 LE, then `rows*cols` f64 LE.
pub fn encode_feature_file(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() != 2 {
        return Err(Error::shape("feature file", format!("need a matrix, got {:?}", t.shape())));
    }
    let mut b = Vec::with_capacity(24 + t.len() * 8);
    b.extend_from_slice(FEATURE_MAGIC);
    b.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    b.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for v in t.data() {
        b.extend_from_slice(&v.to_le_bytes());
    }
    Ok(b)
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 24 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::format("feature file", "bad magic or truncated header"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let body = &bytes[24..];
    if body.len() != rows * cols * 8 {
        return Err(Error::format(
            "feature file",
            format!("{rows}x{cols} needs {} bytes, found {}", rows * cols * 8, body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(vec![rows, cols], data)
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_feature_file(&fs::read(path)?)
}

/// Mean adjusted stress score over the distinct sessions of `speakers`.
pub fn stress_population_mean(utterances: &[Utterance], speakers: &BTreeSet<String>) -> Result<f64> {
    let mut sessions: BTreeMap<&str, f64> = BTreeMap::new();
    for u in utterances.iter().filter(|u| speakers.contains(&u.speaker_id)) {
        if let ConfoundValue::Stress(s) = u.confound {
            if let Some(prev) = sessions.insert(&u.session_id, s) {
                if prev != s {
                    return Err(Error::Data(format!(
                        "session {} carries two stress scores ({prev}, {s})",
                        u.session_id
                    )));
                }
            }
        }
    }
    if sessions.is_empty() {
        return Err(Error::Data("no stress-annotated training sessions".into()));
    }
    Ok(sessions.values().sum::<f64>() / sessions.len() as f64)
}

/// Bins emotion and confound for every utterance. `stress_mean` is required
/// when any utterance carries a stress score.
pub fn assign_labels(
    utterances: &[Utterance],
    target: EmotionTarget,
    stress_mean: Option<f64>,
) -> Result<Vec<LabelBins>> {
    utterances
        .iter()
        .map(|u| {
            let emotion = bin_rating(u.rating_scale, u.rating(target))?;
            let confound = match u.confound {
                ConfoundValue::Stress(s) => {
                    let m = stress_mean.ok_or_else(|| {
                        Error::Config("stress confound needs a population mean".into())
                    })?;
                    bin_stress(s, m)
                }
                ConfoundValue::Spontaneity(Spontaneity::Scripted) => 0,
                ConfoundValue::Spontaneity(Spontaneity::Improvised) => 1,
            };
            Ok(LabelBins { emotion, confound })
        })
        .collect()
}

/// A labelled utterance with its model inputs materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub speaker: String,
    pub session: String,
    pub duration_s: f64,
    pub tokens: Vec<String>,
    pub acoustic: Option<Tensor>,
    pub lexical: Option<Tensor>,
    pub emotion: usize,
    pub confound: usize,
}

impl Sample {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            acoustic: self.acoustic.as_ref(),
            lexical: self.lexical.as_ref(),
        }
    }
}

impl SpeakerItem for Sample {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn speaker(&self) -> &str {
        &self.speaker
    }
}

/// What `load_samples` should materialize.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions<'a> {
    pub acoustic: bool,
    pub embeddings: Option<&'a EmbeddingTable>,
}

/// Materializes inputs. WAV sources are converted to MFBs and z-normalized per
/// session; feature files and inline tensors are used as stored.
pub fn load_samples(
    utterances: &[Utterance],
    labels: &[LabelBins],
    base_dir: &Path,
    opts: LoadOptions<'_>,
) -> Result<Vec<Sample>> {
    if utterances.len() != labels.len() {
        return Err(Error::shape(
            "load_samples",
            format!("{} utterances, {} labels", utterances.len(), labels.len()),
        ));
    }
    let mut acoustic: Vec<Option<Tensor>> = vec![None; utterances.len()];
    if opts.acoustic {
        let mut from_audio: BTreeMap<String, Vec<(usize, Tensor)>> = BTreeMap::new();
        for (i, u) in utterances.iter().enumerate() {
            match &u.acoustic {
                None => {
                    return Err(Error::ModalityMismatch(format!(
                        "utterance {} has no acoustic features",
                        u.id
                    )))
                }
                Some(FeatureSource::Inline(t)) => acoustic[i] = Some(t.clone()),
                Some(FeatureSource::Features(p)) => acoustic[i] = Some(read_feature_file(base_dir.join(p))?),
                Some(FeatureSource::Audio(p)) => {
                    let m = compute_mfb(&read_wav(base_dir.join(p))?)?;
                    from_audio.entry(u.session_id.clone()).or_default().push((i, m));
                }
            }
        }
        let groups: BTreeMap<String, Vec<Tensor>> = from_audio
            .iter()
            .map(|(s, v)| (s.clone(), v.iter().map(|(_, t)| t.clone()).collect()))
            .collect();
        let normed = znormalize(&groups)?;
        for (s, v) in from_audio {
            for ((i, _), t) in v.into_iter().zip(normed[&s].iter()) {
                acoustic[i] = Some(t.clone());
            }
        }
    }
    utterances
        .iter()
        .zip(labels)
        .zip(acoustic)
        .map(|((u, l), a)| {
            let lexical = match opts.embeddings {
                Some(table) => {
                    if !u.has_transcript() {
                        return Err(Error::ModalityMismatch(format!(
                            "utterance {} has no transcript",
                            u.id
                        )));
                    }
                    Some(embed_tokens(&u.tokens, table)?)
                }
                None => None,
            };
            Ok(Sample {
                id: u.id.clone(),
                speaker: u.speaker_id.clone(),
                session: u.session_id.clone(),
                duration_s: u.duration_s,
                tokens: u.tokens.clone(),
                acoustic: a,
                lexical,
                emotion: l.emotion,
                confound: l.confound,
            })
        })
        .collect()
}

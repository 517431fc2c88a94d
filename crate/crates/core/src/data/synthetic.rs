//! Confounded corpus generator. The confound class follows the emotion class
//! with probability `rho` and shifts both the acoustic frames and the token
//! distribution, so a classifier can use it as a shortcut.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::corpus::{ConfoundValue, FeatureSource, Spontaneity, Utterance};
use super::labels::RatingScale;
use crate::error::{Error, Result};
use crate::features::{Category, CategoryLexicon, EmbeddingTable};
use crate::model::EmotionTarget;
use crate::netcore::Tensor;

/// Stress score of the mid level; low and high sit `STRESS_STEP` either side.
pub const STRESS_CENTER: f64 = 17.0;
pub const STRESS_STEP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    /// Inclusive frame-count range of acoustic sequences.
    pub frames: (usize, usize),
    /// Inclusive token-count range of transcripts.
    pub tokens: (usize, usize),
    pub emotion_priors: Vec<f64>,
    /// Three entries give a stress confound, two a scripted/improvised one.
    pub confound_priors: Vec<f64>,
    pub rho: f64,
    /// Rating the confound is tied to; the other rating is drawn independently.
    pub confound_follows: EmotionTarget,
    pub acoustic_dim: usize,
    pub embedding_dim: usize,
    /// Distance between adjacent emotion-class means along a random direction.
    pub acoustic_separation: f64,
    /// Length of the acoustic mean offset; each confound level has its own
    /// random direction, so an unseen level is not a linear extrapolation.
    pub acoustic_shift: f64,
    /// Probability that a token is an emotion word of the utterance's classes.
    pub lexical_emotion_rate: f64,
    /// Filler and adverb probability at the lowest confound level.
    pub filler_base_rate: f64,
    /// Added filler and adverb probability at the highest confound level.
    pub lexical_shift: f64,
    pub speaker_spread: f64,
    /// Per-utterance Gaussian offset, shared by all frames.
    pub utterance_noise: f64,
    pub frame_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            speakers: 40,
            utterances_per_speaker: 24,
            frames: (14, 22),
            tokens: (6, 12),
            emotion_priors: vec![1.0 / 3.0; 3],
            confound_priors: vec![1.0 / 3.0; 3],
            rho: 0.6,
            confound_follows: EmotionTarget::Activation,
            acoustic_dim: 40,
            embedding_dim: 16,
            acoustic_separation: 1.0,
            acoustic_shift: 1.0,
            lexical_emotion_rate: 0.25,
            filler_base_rate: 0.05,
            lexical_shift: 0.3,
            speaker_spread: 0.3,
            utterance_noise: 0.6,
            frame_noise: 1.0,
            seed: 0,
        }
    }
}

fn check_priors(name: &str, p: &[f64], len: &[usize]) -> Result<()> {
    if !len.contains(&p.len()) {
        return Err(Error::Config(format!("{name} must have {len:?} entries, got {}", p.len())));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("{name} {p:?} is not a probability vector")));
    }
    Ok(())
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        check_priors("emotion_priors", &self.emotion_priors, &[3])?;
        check_priors("confound_priors", &self.confound_priors, &[2, 3])?;
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho {} outside [0, 1]", self.rho)));
        }
        if self.speakers == 0 || self.utterances_per_speaker == 0 {
            return Err(Error::Config("speakers and utterances_per_speaker must be positive".into()));
        }
        for (name, (lo, hi)) in [("frames", self.frames), ("tokens", self.tokens)] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) invalid")));
            }
        }
        if self.acoustic_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        let top = self.filler_base_rate + self.lexical_shift;
        for (name, v) in [
            ("lexical_emotion_rate", self.lexical_emotion_rate),
            ("filler_base_rate", self.filler_base_rate),
            ("filler_base_rate + lexical_shift", top),
            ("lexical_emotion_rate + filler rate", self.lexical_emotion_rate + top),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("acoustic_separation", self.acoustic_separation),
            ("acoustic_shift", self.acoustic_shift),
            ("lexical_shift", self.lexical_shift),
            ("speaker_spread", self.speaker_spread),
            ("utterance_noise", self.utterance_noise),
            ("frame_noise", self.frame_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn confound_classes(&self) -> usize {
        self.confound_priors.len()
    }

    /// Confound class tied to an emotion class when the correlation fires.
    pub fn confound_map(&self, emotion: usize) -> usize {
        if self.confound_classes() == 3 {
            emotion
        } else {
            usize::from(emotion >= 1)
        }
    }

    /// Confound level scaled to `[-1, 1]`.
    fn level(&self, c: usize) -> f64 {
        2.0 * c as f64 / (self.confound_classes() - 1) as f64 - 1.0
    }
}

/// Words of the closed synthetic vocabulary, grouped by role.
pub mod vocab {
    pub const ACTIVATION: [&[&str]; 3] = [
        &["tired", "calm", "sleepy", "slow"],
        &["okay", "steady", "fine"],
        &["excited", "energetic", "thrilled", "wild"],
    ];
    pub const VALENCE: [&[&str]; 3] = [
        &["sad", "awful", "upset", "hurt"],
        &["usual", "plain", "normal"],
        &["happy", "great", "love", "nice"],
    ];
    pub const FILLERS: &[&str] = &["uh", "um", "er", "hmm"];
    pub const ADVERBS: &[&str] = &["really", "very", "quite", "totally"];
    pub const NEUTRAL: &[&str] = &[
        "the", "a", "to", "went", "store", "day", "pen", "and", "it", "about", "we", "they", "then", "home",
        "work", "said",
    ];
}

/// Utterances plus the word vectors and lexicon matching their vocabulary.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub utterances: Vec<Utterance>,
    pub embeddings: EmbeddingTable,
    pub lexicon: CategoryLexicon,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v = gaussian(rng, n, 1.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

fn rating_for(rng: &mut ChaCha8Rng, class: usize) -> f64 {
    let (lo, hi) = [(1.5, 4.0), (4.7, 5.3), (6.0, 8.5)][class];
    let r: f64 = rng.random_range(lo..hi);
    (r * 100.0).round() / 100.0
}

fn build_embeddings(rng: &mut ChaCha8Rng, dim: usize) -> Result<EmbeddingTable> {
    let mut map = HashMap::new();
    let group = |words: &[&str], rng: &mut ChaCha8Rng, map: &mut HashMap<String, Vec<f64>>| {
        let centre = gaussian(rng, dim, 1.0);
        for w in words {
            let v: Vec<f64> = centre
                .iter()
                .zip(gaussian(rng, dim, 0.4))
                .map(|(c, n)| c + n)
                .collect();
            map.insert(w.to_string(), v);
        }
    };
    for words in vocab::ACTIVATION.iter().chain(vocab::VALENCE.iter()) {
        group(words, rng, &mut map);
    }
    group(vocab::FILLERS, rng, &mut map);
    group(vocab::ADVERBS, rng, &mut map);
    for w in vocab::NEUTRAL {
        group(&[w], rng, &mut map);
    }
    EmbeddingTable::new(dim, map)
}

fn build_lexicon() -> CategoryLexicon {
    let mut lex = CategoryLexicon::new();
    let add = |lex: &mut CategoryLexicon, c: Category, words: &[&str]| {
        for w in words {
            lex.insert(c, w);
        }
    };
    add(&mut lex, Category::Filler, vocab::FILLERS);
    add(&mut lex, Category::Adverb, vocab::ADVERBS);
    add(&mut lex, Category::Posemo, vocab::VALENCE[2]);
    add(&mut lex, Category::Negemo, vocab::VALENCE[0]);
    add(&mut lex, Category::Pronoun, &["we", "they", "it"]);
    add(&mut lex, Category::Social, &["said"]);
    add(&mut lex, Category::Discourse, &["then"]);
    lex
}

pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.acoustic_dim;
    let act_dir = unit(&mut rng, d);
    let val_dir = unit(&mut rng, d);
    let shift_dirs: Vec<Vec<f64>> = (0..cfg.confound_classes()).map(|_| unit(&mut rng, d)).collect();
    let embeddings = build_embeddings(&mut rng, cfg.embedding_dim)?;
    let emotion_dist = WeightedIndex::new(&cfg.emotion_priors).map_err(|e| Error::Config(e.to_string()))?;
    let confound_dist = WeightedIndex::new(&cfg.confound_priors).map_err(|e| Error::Config(e.to_string()))?;
    let binary = cfg.confound_classes() == 2;

    let mut utterances = Vec::with_capacity(cfg.speakers * cfg.utterances_per_speaker);
    for s in 0..cfg.speakers {
        let speaker = format!("spk{s:03}");
        let offset = gaussian(&mut rng, d, cfg.speaker_spread);
        for u in 0..cfg.utterances_per_speaker {
            let tied: usize = emotion_dist.sample(&mut rng);
            let other: usize = emotion_dist.sample(&mut rng);
            let (act, val) = match cfg.confound_follows {
                EmotionTarget::Activation => (tied, other),
                EmotionTarget::Valence => (other, tied),
            };
            let confound = if rng.random_bool(cfg.rho) {
                cfg.confound_map(tied)
            } else {
                confound_dist.sample(&mut rng)
            };
            let level = cfg.level(confound);

            let t = rng.random_range(cfg.frames.0..=cfg.frames.1);
            let utt_noise = gaussian(&mut rng, d, cfg.utterance_noise);
            let mean: Vec<f64> = (0..d)
                .map(|j| {
                    cfg.acoustic_separation * ((act as f64 - 1.0) * act_dir[j] + (val as f64 - 1.0) * val_dir[j])
                        + cfg.acoustic_shift * shift_dirs[confound][j]
                        + offset[j]
                        + utt_noise[j]
                })
                .collect();
            let mut frames = Vec::with_capacity(t * d);
            for _ in 0..t {
                for m in &mean {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    frames.push(m + cfg.frame_noise * n);
                }
            }

            let n_tokens = rng.random_range(cfg.tokens.0..=cfg.tokens.1);
            let filler_rate = cfg.filler_base_rate + cfg.lexical_shift * (level + 1.0) / 2.0;
            let mut tokens = Vec::with_capacity(n_tokens);
            for _ in 0..n_tokens {
                let r: f64 = rng.random();
                let pick = |rng: &mut ChaCha8Rng, words: &[&str]| words[rng.random_range(0..words.len())].to_string();
                let tok = if r < cfg.lexical_emotion_rate {
                    if rng.random_bool(0.5) {
                        pick(&mut rng, vocab::ACTIVATION[act])
                    } else {
                        pick(&mut rng, vocab::VALENCE[val])
                    }
                } else if r < cfg.lexical_emotion_rate + filler_rate {
                    if rng.random_bool(0.6) {
                        pick(&mut rng, vocab::FILLERS)
                    } else {
                        pick(&mut rng, vocab::ADVERBS)
                    }
                } else {
                    pick(&mut rng, vocab::NEUTRAL)
                };
                tokens.push(tok);
            }
            let words_per_s: f64 = rng.random_range(2.0..3.5);
            let duration_s = ((n_tokens as f64 / words_per_s).max(3.0) * 100.0).round() / 100.0;

            let (session, raw) = if binary {
                let flag = if confound == 1 {
                    Spontaneity::Improvised
                } else {
                    Spontaneity::Scripted
                };
                (format!("{speaker}-c{confound}"), ConfoundValue::Spontaneity(flag))
            } else {
                let score = STRESS_CENTER + STRESS_STEP * (confound as f64 - 1.0);
                (format!("{speaker}-c{confound}"), ConfoundValue::Stress(score))
            };
            utterances.push(Utterance {
                id: format!("{speaker}-u{u:03}"),
                speaker_id: speaker.clone(),
                session_id: session,
                duration_s,
                acoustic: Some(FeatureSource::Inline(Tensor::new(vec![t, d], frames)?)),
                tokens,
                activation: rating_for(&mut rng, act),
                valence: rating_for(&mut rng, val),
                rating_scale: RatingScale::NinePoint,
                confound: raw,
                corpus: "synthetic".into(),
            });
        }
    }
    Ok(SyntheticCorpus {
        utterances,
        embeddings,
        lexicon: build_lexicon(),
    })
}

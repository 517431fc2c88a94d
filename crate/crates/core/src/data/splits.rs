use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Sample, SpeakerItem};
use crate::error::{Error, Result};

pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Validation,
    Test,
}

/// Role of every item in one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold: usize,
    pub assignment: BTreeMap<String, Role>,
}

impl SplitPlan {
    pub fn role(&self, id: &str) -> Option<Role> {
        self.assignment.get(id).copied()
    }

    /// Items of `role`, in input order.
    pub fn select<'a, T: SpeakerItem>(&self, items: &'a [T], role: Role) -> Vec<&'a T> {
        items
            .iter()
            .filter(|x| self.role(x.item_id()) == Some(role))
            .collect()
    }

    pub fn splits<'a>(&self, samples: &'a [Sample]) -> Splits<'a> {
        Splits {
            train: self.select(samples, Role::Train),
            validation: self.select(samples, Role::Validation),
            test: self.select(samples, Role::Test),
        }
    }
}

/// Borrowed train/validation/test views over loaded samples.
#[derive(Debug, Clone, Default)]
pub struct Splits<'a> {
    pub train: Vec<&'a Sample>,
    pub validation: Vec<&'a Sample>,
    pub test: Vec<&'a Sample>,
}

impl Splits<'_> {
    pub fn speakers(items: &[&Sample]) -> BTreeSet<String> {
        items.iter().map(|s| s.speaker.clone()).collect()
    }

    /// No speaker appears in two roles.
    pub fn is_speaker_disjoint(&self) -> bool {
        let (a, b, c) = (
            Self::speakers(&self.train),
            Self::speakers(&self.validation),
            Self::speakers(&self.test),
        );
        a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c)
    }
}

fn speaker_counts<T: SpeakerItem>(items: &[T]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for x in items {
        *m.entry(x.speaker().to_string()).or_insert(0) += 1;
    }
    m
}

fn validation_count(n: usize) -> usize {
    ((n as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, n - 1)
}

/// Splits `speakers` into (train, validation) with a seeded 80:20 draw.
pub fn split_speakers(speakers: &BTreeSet<String>, seed: u64) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if speakers.len() < 2 {
        return Err(Error::TooFewSpeakers {
            needed: 2,
            found: speakers.len(),
        });
    }
    let mut v: Vec<&String> = speakers.iter().collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let nv = validation_count(v.len());
    let val = v[..nv].iter().map(|s| s.to_string()).collect();
    let train = v[nv..].iter().map(|s| s.to_string()).collect();
    Ok((train, val))
}

/// Speaker-disjoint train/validation plan over all `items` (no test role).
pub fn train_validation_plan<T: SpeakerItem>(items: &[T], seed: u64) -> Result<SplitPlan> {
    let speakers: BTreeSet<String> = speaker_counts(items).into_keys().collect();
    let (_, val) = split_speakers(&speakers, seed)?;
    let assignment = items
        .iter()
        .map(|x| {
            let r = if val.contains(x.speaker()) {
                Role::Validation
            } else {
                Role::Train
            };
            (x.item_id().to_string(), r)
        })
        .collect();
    Ok(SplitPlan { fold: 0, assignment })
}

/// `k` folds. Speakers are dealt largest-first (seeded order among equal
/// sizes) to the group with the fewest utterances; fold `i` tests group `i`
/// and holds out a seeded 20% of the remaining speakers for validation.
pub fn make_speaker_independent_folds<T: SpeakerItem>(items: &[T], k: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let counts = speaker_counts(items);
    if counts.len() < k || counts.len() < 3 {
        return Err(Error::TooFewSpeakers {
            needed: k.max(3),
            found: counts.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<(&String, usize)> = counts.iter().map(|(s, &c)| (s, c)).collect();
    order.shuffle(&mut rng);
    order.sort_by(|a, b| b.1.cmp(&a.1));
    let mut groups: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    let mut load = vec![0usize; k];
    for (spk, c) in order {
        let g = (0..k).min_by_key(|&g| (load[g], g)).expect("k > 0");
        groups[g].insert(spk.clone());
        load[g] += c;
    }
    let mut plans = Vec::with_capacity(k);
    for (i, test) in groups.iter().enumerate() {
        let rest: BTreeSet<String> = counts.keys().filter(|s| !test.contains(*s)).cloned().collect();
        let (_, val) = split_speakers(&rest, seed.wrapping_add(1 + i as u64))?;
        let assignment = items
            .iter()
            .map(|x| {
                let r = if test.contains(x.speaker()) {
                    Role::Test
                } else if val.contains(x.speaker()) {
                    Role::Validation
                } else {
                    Role::Train
                };
                (x.item_id().to_string(), r)
            })
            .collect();
        plans.push(SplitPlan { fold: i, assignment });
    }
    Ok(plans)
}

/// Source keeps every other confound level; target is `held_out_level` only.
pub fn partition_by_confound(samples: &[Sample], held_out_level: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (target, source): (Vec<Sample>, Vec<Sample>) =
        samples.iter().cloned().partition(|s| s.confound == held_out_level);
    if target.is_empty() {
        return Err(Error::Data(format!("no samples at confound level {held_out_level}")));
    }
    if source.is_empty() {
        return Err(Error::Data(format!("every sample is at confound level {held_out_level}")));
    }
    Ok((source, target))
}

/// Maps the confound levels present in `samples` onto `0..n` in ascending
/// order, returning the original levels. Training on a partition whose source
/// lacks one level uses this so the confound head has no empty class.
pub fn compact_confound_levels(samples: &mut [Sample]) -> Vec<usize> {
    let levels: Vec<usize> = samples
        .iter()
        .map(|s| s.confound)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for s in samples.iter_mut() {
        s.confound = levels.binary_search(&s.confound).expect("present level");
    }
    levels
}

/// Speakers with samples on both sides, for the leave-one-speaker-out protocol.
pub fn overlapping_speakers(source: &[Sample], target: &[Sample]) -> Vec<String> {
    let a: BTreeSet<&str> = source.iter().map(|s| s.speaker.as_str()).collect();
    let b: BTreeSet<&str> = target.iter().map(|s| s.speaker.as_str()).collect();
    a.intersection(&b).map(|s| s.to_string()).collect()
}

/// One run per overlapping speaker: that speaker is dropped from the source
/// and the target is narrowed to that speaker alone.
pub fn speaker_holdouts(source: &[Sample], target: &[Sample]) -> Vec<(String, Vec<Sample>, Vec<Sample>)> {
    overlapping_speakers(source, target)
        .into_iter()
        .map(|spk| {
            let src = source.iter().filter(|s| s.speaker != spk).cloned().collect();
            let tgt = target.iter().filter(|s| s.speaker == spk).cloned().collect();
            (spk, src, tgt)
        })
        .collect()
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::confusion::{uar_present, ConfusionMatrix};
use super::stats::{paired_t_test, TTest};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{EmotionTarget, NetworkParams, TrainingMode};
use crate::train::{predict, Predictions};

/// Significance level for the per-speaker paired test.
pub const TRANSFER_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Test speakers come from the training corpus and confound range.
    InDomain,
    /// Source and target are confound partitions of one corpus.
    Partition,
    /// Target is a different corpus.
    CrossCorpus,
}

/// Target-side results for one training mode, pooled over its runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUar {
    pub training_mode: TrainingMode,
    pub fingerprints: Vec<String>,
    pub seeds: Vec<u64>,
    /// Target emotion UAR of each run, in input order.
    pub run_uar: Vec<f64>,
    pub mean_uar: f64,
    /// Mean over runs of each target speaker's UAR.
    pub speaker_uar: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UarReport {
    pub source: String,
    pub target: String,
    pub mode: TransferMode,
    pub emotion_target: EmotionTarget,
    pub target_samples: usize,
    pub normal: ModelUar,
    pub adversarial: ModelUar,
    /// Adversarial mean target UAR minus normal mean.
    pub delta: f64,
    /// Paired over target speakers, adversarial minus normal.
    pub speaker_test: Option<TTest>,
    /// Why `speaker_test` is missing, if it is.
    pub speaker_test_note: Option<String>,
    /// True unless the gain is positive and significant, i.e. the data do
    /// not rule out that adversarial training hurts on this target.
    pub opposite_sign_possible: bool,
}

/// Per-run predictions of one model on a target set, tagged with the run.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRun {
    pub fingerprint: String,
    pub seed: u64,
    pub training_mode: TrainingMode,
    pub emotion_target: EmotionTarget,
    pub predictions: Predictions,
}

fn speaker_uars(p: &Predictions, classes: usize) -> Result<BTreeMap<String, f64>> {
    let pred = p.emotion_pred();
    let mut by_speaker: BTreeMap<&str, ConfusionMatrix> = BTreeMap::new();
    for i in 0..p.len() {
        by_speaker
            .entry(&p.speakers[i])
            .or_insert_with(|| ConfusionMatrix::new(classes))
            .add(p.emotion_true[i], pred[i])?;
    }
    by_speaker
        .into_iter()
        .map(|(s, m)| Ok((s.to_string(), uar_present(&m)?)))
        .collect()
}

fn pool(runs: &[&TargetRun], mode: TrainingMode) -> Result<ModelUar> {
    let first = runs.first().ok_or(Error::EmptyInput("transfer runs"))?;
    let classes = first.predictions.emotion_probs.first().map_or(0, |p| p.len());
    let mut run_uar = Vec::with_capacity(runs.len());
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for r in runs {
        if r.predictions.ids != first.predictions.ids {
            return Err(Error::shape("transfer", "runs scored different target samples"));
        }
        run_uar.push(r.predictions.emotion_uar()?);
        for (s, u) in speaker_uars(&r.predictions, classes)? {
            *sums.entry(s).or_default() += u;
        }
    }
    let n = runs.len() as f64;
    Ok(ModelUar {
        training_mode: mode,
        fingerprints: runs.iter().map(|r| r.fingerprint.clone()).collect(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        mean_uar: run_uar.iter().sum::<f64>() / n,
        run_uar,
        speaker_uar: sums.into_iter().map(|(s, v)| (s, v / n)).collect(),
    })
}

/// Builds the normal-versus-adversarial report from predictions already
/// made on the target set.
pub fn uar_report(source: &str, target: &str, mode: TransferMode, runs: &[TargetRun]) -> Result<UarReport> {
    let normal: Vec<&TargetRun> = runs.iter().filter(|r| r.training_mode == TrainingMode::Normal).collect();
    let adversarial: Vec<&TargetRun> =
        runs.iter().filter(|r| r.training_mode == TrainingMode::Adversarial).collect();
    if normal.is_empty() || adversarial.is_empty() {
        return Err(Error::Config(format!(
            "transfer report needs normal and adversarial runs, got {} and {}",
            normal.len(),
            adversarial.len()
        )));
    }
    let emotion_target = runs[0].emotion_target;
    if runs.iter().any(|r| r.emotion_target != emotion_target) {
        return Err(Error::Config("transfer runs mix emotion targets".into()));
    }
    let normal = pool(&normal, TrainingMode::Normal)?;
    let adversarial = pool(&adversarial, TrainingMode::Adversarial)?;
    if normal.speaker_uar.keys().ne(adversarial.speaker_uar.keys()) {
        return Err(Error::shape("transfer", "normal and adversarial runs scored different targets"));
    }
    let a: Vec<f64> = adversarial.speaker_uar.values().copied().collect();
    let b: Vec<f64> = normal.speaker_uar.values().copied().collect();
    let (speaker_test, speaker_test_note) = match paired_t_test(&a, &b) {
        Ok(t) => (Some(t), None),
        Err(e @ (Error::DegenerateTest(_) | Error::EmptyInput(_) | Error::ShapeMismatch { .. })) => {
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let delta = adversarial.mean_uar - normal.mean_uar;
    let significant_gain = speaker_test.as_ref().is_some_and(|t| t.p < TRANSFER_ALPHA && t.t > 0.0);
    Ok(UarReport {
        source: source.to_string(),
        target: target.to_string(),
        mode,
        emotion_target,
        target_samples: runs[0].predictions.len(),
        opposite_sign_possible: !(delta > 0.0 && significant_gain),
        normal,
        adversarial,
        delta,
        speaker_test,
        speaker_test_note,
    })
}

/// Fails if any target sample cannot feed `params`.
pub fn check_modality(params: &NetworkParams, target: &[Sample]) -> Result<()> {
    let spec = params.spec();
    for s in target {
        if spec.modality.uses_acoustic() && s.acoustic.is_none() {
            return Err(Error::ModalityMismatch(format!(
                "{} needs acoustic input but target sample {} has none",
                spec.label(),
                s.id
            )));
        }
        if spec.modality.uses_lexical() && s.lexical.is_none() {
            return Err(Error::ModalityMismatch(format!(
                "{} needs lexical input but target sample {} has none",
                spec.label(),
                s.id
            )));
        }
    }
    Ok(())
}

/// Scores trained models on a target set they never saw and compares the
/// two training modes. `training_ids` are the sample ids used for training
/// or validation of any of the models.
pub fn cross_domain_eval(
    models: &[(&NetworkParams, u64)],
    source: &str,
    target_name: &str,
    target: &[Sample],
    training_ids: &BTreeSet<String>,
    mode: TransferMode,
) -> Result<UarReport> {
    if target.is_empty() {
        return Err(Error::EmptyInput("transfer target"));
    }
    if let Some(s) = target.iter().find(|s| training_ids.contains(&s.id)) {
        return Err(Error::Data(format!("target sample {} was used in training", s.id)));
    }
    for (p, _) in models {
        check_modality(p, target)?;
    }
    let refs: Vec<&Sample> = target.iter().collect();
    let runs = models
        .iter()
        .map(|(p, seed)| {
            Ok(TargetRun {
                fingerprint: p.fingerprint().to_string(),
                seed: *seed,
                training_mode: p.spec().training_mode,
                emotion_target: p.spec().emotion_target,
                predictions: predict(p, &refs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    uar_report(source, target_name, mode, &runs)
}

/// Merges reports from the leave-one-overlapping-speaker-out protocol, where
/// each report holds out one speaker. A model's UAR is the average over
/// held-out runs and every speaker contributes its own held-out score.
pub fn merge_speaker_holdouts(reports: &[UarReport]) -> Result<UarReport> {
    let first = reports.first().ok_or(Error::EmptyInput("speaker holdouts"))?;
    let merge = |pick: fn(&UarReport) -> &ModelUar| -> Result<ModelUar> {
        let mut speaker_uar = BTreeMap::new();
        let mut run_uar = Vec::new();
        let mut fingerprints = Vec::new();
        let mut seeds = Vec::new();
        for r in reports {
            let m = pick(r);
            for (s, u) in &m.speaker_uar {
                if speaker_uar.insert(s.clone(), *u).is_some() {
                    return Err(Error::Data(format!("speaker {s} held out twice")));
                }
            }
            run_uar.push(m.mean_uar);
            fingerprints.extend(m.fingerprints.iter().cloned());
            seeds.extend(m.seeds.iter().copied());
        }
        Ok(ModelUar {
            training_mode: pick(first).training_mode,
            fingerprints,
            seeds,
            mean_uar: run_uar.iter().sum::<f64>() / run_uar.len() as f64,
            run_uar,
            speaker_uar,
        })
    };
    let normal = merge(|r| &r.normal)?;
    let adversarial = merge(|r| &r.adversarial)?;
    let a: Vec<f64> = adversarial.speaker_uar.values().copied().collect();
    let b: Vec<f64> = normal.speaker_uar.values().copied().collect();
    let (speaker_test, speaker_test_note) = match paired_t_test(&a, &b) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let delta = adversarial.mean_uar - normal.mean_uar;
    let significant_gain = speaker_test.as_ref().is_some_and(|t| t.p < TRANSFER_ALPHA && t.t > 0.0);
    Ok(UarReport {
        source: first.source.clone(),
        target: first.target.clone(),
        mode: first.mode,
        emotion_target: first.emotion_target,
        target_samples: reports.iter().map(|r| r.target_samples).sum(),
        opposite_sign_possible: !(delta > 0.0 && significant_gain),
        normal,
        adversarial,
        delta,
        speaker_test,
        speaker_test_note,
    })
}

/// Text table with one block per target and one column per emotion target.
/// A `*` marks an adversarial UAR whose per-speaker gain is significant.
pub fn render_transfer_table(reports: &[UarReport]) -> String {
    let mut blocks: BTreeMap<(&str, &str), Vec<&UarReport>> = BTreeMap::new();
    for r in reports {
        blocks.entry((&r.source, &r.target)).or_default().push(r);
    }
    let mut out = String::new();
    for ((source, target), rs) in blocks {
        let cell = |r: Option<&&UarReport>, adv: bool| match r {
            None => format!("{:>12}", "-"),
            Some(r) if adv => {
                let star = match &r.speaker_test {
                    Some(t) if t.p < TRANSFER_ALPHA && t.t > 0.0 => "*",
                    _ => " ",
                };
                format!("{:>11.3}{star}", r.adversarial.mean_uar)
            }
            Some(r) => format!("{:>11.3} ", r.normal.mean_uar),
        };
        let act = rs.iter().find(|r| r.emotion_target == EmotionTarget::Activation);
        let val = rs.iter().find(|r| r.emotion_target == EmotionTarget::Valence);
        let _ = writeln!(out, "Train: {source}  Test: {target}");
        let _ = writeln!(out, "{:<12}{:>12}{:>12}", "model", "activation", "valence");
        let _ = writeln!(out, "{:<12}{}{}", "normal", cell(act, false), cell(val, false));
        let _ = writeln!(out, "{:<12}{}{}", "adversarial", cell(act, true), cell(val, true));
        for r in [act, val].into_iter().flatten() {
            let test = match &r.speaker_test {
                Some(t) => format!("t={:.3} df={} p={:.4}", t.t, t.df, t.p),
                None => format!("no test ({})", r.speaker_test_note.as_deref().unwrap_or("")),
            };
            let _ = writeln!(
                out,
                "  {}: delta {:+.4}, {test}{}",
                r.emotion_target.as_str(),
                r.delta,
                if r.opposite_sign_possible { ", opposite sign possible" } else { "" }
            );
        }
        out.push('\n');
    }
    out
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{rmsprop_step, EarlyStopper, StopDecision};
use crate::data::{Sample, Splits};
use crate::error::{Error, Result};
use crate::eval::{uar_present, ConfusionMatrix};
use crate::model::{
    build_variant, forward, forward_on_tape, Binding, GrlMode, NetworkParams, VariantSpec, EMOTION_CLASSES,
};
use crate::netcore::{NodeId, Tape, Tensor, LOG_CLAMP};

/// Anything holding named trainable tensors.
pub(crate) trait ParamStore: Clone {
    fn tensors(&self) -> &BTreeMap<String, Tensor>;
    fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor>;
}

impl ParamStore for NetworkParams {
    fn tensors(&self) -> &BTreeMap<String, Tensor> {
        NetworkParams::tensors(self)
    }
    fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        NetworkParams::tensors_mut(self)
    }
}

pub(crate) fn bind_map(tensors: &BTreeMap<String, Tensor>, tape: &mut Tape) -> Binding {
    Binding::from_ids(
        tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(v.clone())))
            .collect(),
    )
}

/// Inverse class frequency scaled so the weights average to 1.
pub fn class_weights(labels: impl IntoIterator<Item = usize>, classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; classes];
    for l in labels {
        *counts.get_mut(l).ok_or(Error::IndexOutOfRange { index: l, len: classes })? += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(empty));
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let mean = inv.iter().sum::<f64>() / classes as f64;
    Ok(inv.into_iter().map(|w| w / mean).collect())
}

/// Mean of `w[y]·(−ln max(p_y, 1e-12))`, the loss the tape minimizes.
pub fn weighted_ce_mean(probs: &[Vec<f64>], truth: &[usize], weights: &[f64]) -> f64 {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .zip(truth)
        .map(|(p, &y)| -weights[y] * p[y].max(LOG_CLAMP).ln())
        .sum::<f64>()
        / n
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct FitResult<P, T> {
    pub params: P,
    pub history: Vec<(f64, T)>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Minibatch RMSProp with early stopping on the first value `evaluate`
/// returns. Each sample gets its own tape; batch gradients are averaged.
pub(crate) fn fit<P, T>(
    mut params: P,
    n_train: usize,
    cfg: &TrainConfig,
    seed: u64,
    mut sample_loss: impl FnMut(&P, &Binding, &mut Tape, usize) -> Result<NodeId>,
    mut evaluate: impl FnMut(&P) -> Result<(f64, T)>,
) -> Result<FitResult<P, T>>
where
    P: ParamStore,
{
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::EmptyInput("training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut state: BTreeMap<String, Vec<f64>> = params
        .tensors()
        .iter()
        .map(|(k, v)| (k.clone(), vec![0.0; v.len()]))
        .collect();
    let mut accum = state.clone();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut stopper = EarlyStopper::new(cfg.patience, cfg.max_epochs);
    let mut best = params.clone();
    let mut history = Vec::new();
    let diverged = |epoch: usize, e: Error| match e {
        Error::NonFinite(op) => Error::Diverged {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    };
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            accum.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for &i in batch {
                let mut tape = Tape::new();
                let binding = bind_map(params.tensors(), &mut tape);
                let loss = sample_loss(&params, &binding, &mut tape, i).map_err(|e| diverged(epoch, e))?;
                epoch_loss += tape.value(loss).item();
                let grads = tape.backward(loss)?;
                for (name, id) in binding.iter() {
                    if let Some(g) = grads.get(*id) {
                        for (a, v) in accum.get_mut(name).expect("same layout").iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (name, t) in params.tensors_mut().iter_mut() {
                let g = accum.get_mut(name).expect("same layout");
                g.iter_mut().for_each(|v| *v *= scale);
                let s = state.get_mut(name).expect("same layout");
                rmsprop_step(t.data_mut(), g, s, cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps)?;
                if !t.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("parameter {name} became non-finite"),
                    });
                }
            }
        }
        let train_loss = epoch_loss / n_train as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "training loss is not finite".into(),
            });
        }
        let (monitor, payload) = evaluate(&params).map_err(|e| diverged(epoch, e))?;
        if !monitor.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "validation loss is not finite".into(),
            });
        }
        history.push((train_loss, payload));
        let (improved, decision) = stopper.observe(monitor);
        if improved {
            best = params.clone();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    Ok(FitResult {
        params: best,
        stopped_early: stopper.epochs_seen() < cfg.max_epochs,
        best_epoch: stopper.best_epoch(),
        history,
    })
}

/// Model outputs over a list of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub speakers: Vec<String>,
    pub emotion_true: Vec<usize>,
    pub confound_true: Vec<usize>,
    pub emotion_probs: Vec<Vec<f64>>,
    pub confound_probs: Option<Vec<Vec<f64>>>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn emotion_pred(&self) -> Vec<usize> {
        self.emotion_probs.iter().map(|p| argmax(p)).collect()
    }

    pub fn confound_pred(&self) -> Option<Vec<usize>> {
        self.confound_probs
            .as_ref()
            .map(|ps| ps.iter().map(|p| argmax(p)).collect())
    }

    pub fn emotion_confusion(&self) -> Result<ConfusionMatrix> {
        ConfusionMatrix::from_predictions(EMOTION_CLASSES, &self.emotion_true, &self.emotion_pred())
    }

    /// UAR over the emotion classes present in this set.
    pub fn emotion_uar(&self) -> Result<f64> {
        uar_present(&self.emotion_confusion()?)
    }

    pub fn confound_uar(&self, classes: usize) -> Result<Option<f64>> {
        match self.confound_pred() {
            None => Ok(None),
            Some(pred) => Ok(Some(uar_present(&ConfusionMatrix::from_predictions(
                classes,
                &self.confound_true,
                &pred,
            )?)?)),
        }
    }

    /// Per-sample emotion correctness.
    pub fn successes(&self) -> Vec<bool> {
        self.emotion_pred()
            .iter()
            .zip(&self.emotion_true)
            .map(|(p, t)| p == t)
            .collect()
    }
}

/// Runs inference on every sample.
pub fn predict(params: &NetworkParams, samples: &[&Sample]) -> Result<Predictions> {
    let mut emotion_probs = Vec::with_capacity(samples.len());
    let mut confound_probs = params.has_confound_head().then(Vec::new);
    for s in samples {
        let out = forward(params, s.input())?;
        emotion_probs.push(out.emotion_probs);
        if let (Some(all), Some(c)) = (confound_probs.as_mut(), out.confound_probs) {
            all.push(c);
        }
    }
    Ok(Predictions {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        speakers: samples.iter().map(|s| s.speaker.clone()).collect(),
        emotion_true: samples.iter().map(|s| s.emotion).collect(),
        confound_true: samples.iter().map(|s| s.confound).collect(),
        emotion_probs,
        confound_probs,
    })
}

/// Validation metrics after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_emotion_loss: f64,
    pub val_emotion_uar: f64,
    pub val_confound_loss: Option<f64>,
    pub val_confound_uar: Option<f64>,
}

/// Outcome of one seeded training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub spec: VariantSpec,
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub emotion_weights: Vec<f64>,
    pub confound_weights: Option<Vec<f64>>,
    pub params: NetworkParams,
    pub validation: Predictions,
    pub test: Predictions,
}

impl RunRecord {
    pub fn best(&self) -> &EpochMetrics {
        &self.history[self.best_epoch - 1]
    }

    pub fn fingerprint(&self) -> &str {
        self.params.fingerprint()
    }
}

struct ValidationEval {
    emotion_loss: f64,
    emotion_uar: f64,
    confound_loss: Option<f64>,
    confound_uar: Option<f64>,
}

fn validation_metrics(
    params: &NetworkParams,
    samples: &[&Sample],
    we: &[f64],
    wc: Option<&[f64]>,
) -> Result<ValidationEval> {
    let p = predict(params, samples)?;
    let confound_loss = match (&p.confound_probs, wc) {
        (Some(cp), Some(w)) => Some(weighted_ce_mean(cp, &p.confound_true, w)),
        _ => None,
    };
    Ok(ValidationEval {
        emotion_loss: weighted_ce_mean(&p.emotion_probs, &p.emotion_true, we),
        emotion_uar: p.emotion_uar()?,
        confound_loss,
        confound_uar: p.confound_uar(params.spec().confound_classes)?,
    })
}

/// Recomputes `(emotion loss, emotion UAR)` on the validation split with the
/// weights a record restored.
pub fn revalidate(record: &RunRecord, validation: &[&Sample]) -> Result<(f64, f64)> {
    let v = validation_metrics(
        &record.params,
        validation,
        &record.emotion_weights,
        record.confound_weights.as_deref(),
    )?;
    Ok((v.emotion_loss, v.emotion_uar))
}

pub fn train_run(spec: &VariantSpec, splits: &Splits<'_>, cfg: &TrainConfig, seed: u64) -> Result<RunRecord> {
    train_run_with(spec, splits, cfg, seed, GrlMode::Reverse)
}

/// `train_run` with a choice of what sits between the embedding and the
/// confound head. `GrlMode::Identity` trains both heads cooperatively.
pub fn train_run_with(
    spec: &VariantSpec,
    splits: &Splits<'_>,
    cfg: &TrainConfig,
    seed: u64,
    grl: GrlMode,
) -> Result<RunRecord> {
    spec.validate()?;
    cfg.validate()?;
    if splits.validation.is_empty() {
        return Err(Error::EmptyInput("validation split"));
    }
    let train = &splits.train;
    let we = class_weights(train.iter().map(|s| s.emotion), EMOTION_CLASSES)?;
    let wc = if spec.is_adversarial() {
        Some(class_weights(train.iter().map(|s| s.confound), spec.confound_classes)?)
    } else {
        None
    };
    let params = build_variant(spec, seed)?;
    let fitted = fit(
        params,
        train.len(),
        cfg,
        seed,
        |p: &NetworkParams, b, tape, i| {
            let s = train[i];
            let nodes = forward_on_tape(p, b, tape, s.input(), grl)?;
            let le = tape.weighted_cross_entropy(nodes.emotion_probs, s.emotion, we[s.emotion])?;
            match (nodes.confound_probs, &wc) {
                (Some(cp), Some(w)) => {
                    let lc = tape.weighted_cross_entropy(cp, s.confound, w[s.confound])?;
                    tape.add(le, lc)
                }
                _ => Ok(le),
            }
        },
        |p| {
            let v = validation_metrics(p, &splits.validation, &we, wc.as_deref())?;
            Ok((v.emotion_loss, v))
        },
    )?;
    let history = fitted
        .history
        .into_iter()
        .enumerate()
        .map(|(i, (train_loss, v))| EpochMetrics {
            epoch: i + 1,
            train_loss,
            val_emotion_loss: v.emotion_loss,
            val_emotion_uar: v.emotion_uar,
            val_confound_loss: v.confound_loss,
            val_confound_uar: v.confound_uar,
        })
        .collect();
    let validation = predict(&fitted.params, &splits.validation)?;
    let test = predict(&fitted.params, &splits.test)?;
    Ok(RunRecord {
        spec: spec.clone(),
        seed,
        history,
        best_epoch: fitted.best_epoch,
        stopped_early: fitted.stopped_early,
        emotion_weights: we,
        confound_weights: wc,
        params: fitted.params,
        validation,
        test,
    })
}

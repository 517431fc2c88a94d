use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::{argmax, class_weights, fit, weighted_ce_mean, ParamStore};
use crate::data::{Sample, Splits};
use crate::error::{Error, Result};
use crate::eval::{uar_present, ConfusionMatrix};
use crate::model::{embed, head_forward, head_slots, init_slots, Binding, HeadHyper, NetworkParams};
use crate::netcore::{Tape, Tensor};

const PREFIX: &str = "probe";

#[derive(Debug, Clone, PartialEq)]
struct HeadParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore for HeadParams {
    fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }
    fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }
}

fn head_probs(head: &HeadParams, dense_layers: usize, x: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let binding = Binding::from_ids(
        head.tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
            .collect(),
    );
    let input = tape.constant(Tensor::vector(x.to_vec()));
    let p = head_forward(&mut tape, &binding, PREFIX, dense_layers, input)?;
    Ok(tape.value(p).data().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub test_uar: f64,
    pub val_uar: f64,
    pub best_epoch: usize,
    pub epochs: usize,
}

fn embed_all(params: &NetworkParams, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|s| embed(params, s.input())).collect()
}

/// Freezes the embedding sub-network of `params`, trains a fresh confound
/// head (same shape as the emotion head) on the train split with the usual
/// recipe, and reports its UAR on the test split.
pub fn probe_confound(
    params: &NetworkParams,
    splits: &Splits<'_>,
    cfg: &TrainConfig,
    seed: u64,
    classes: usize,
) -> Result<ProbeResult> {
    if splits.validation.is_empty() || splits.test.is_empty() {
        return Err(Error::EmptyInput("probe splits"));
    }
    let spec = params.spec();
    let head: HeadHyper = spec.head;
    let train_x = embed_all(params, &splits.train)?;
    let val_x = embed_all(params, &splits.validation)?;
    let test_x = embed_all(params, &splits.test)?;
    let train_y: Vec<usize> = splits.train.iter().map(|s| s.confound).collect();
    let val_y: Vec<usize> = splits.validation.iter().map(|s| s.confound).collect();
    let test_y: Vec<usize> = splits.test.iter().map(|s| s.confound).collect();
    let w = class_weights(train_y.iter().copied(), classes)?;

    let mut slots = Vec::new();
    head_slots(&mut slots, PREFIX, &head, spec.embedding_dim(), classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let init = HeadParams {
        tensors: init_slots(&slots, &mut rng),
    };
    let dl = head.dense_layers;
    let predict = |h: &HeadParams, xs: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| head_probs(h, dl, x)).collect()
    };
    let uar_of = |probs: &[Vec<f64>], y: &[usize]| -> Result<f64> {
        let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        uar_present(&ConfusionMatrix::from_predictions(classes, y, &pred)?)
    };
    let fitted = fit(
        init,
        train_x.len(),
        cfg,
        seed,
        |_h: &HeadParams, b, tape, i| {
            let x = tape.constant(Tensor::vector(train_x[i].clone()));
            let p = head_forward(tape, b, PREFIX, dl, x)?;
            tape.weighted_cross_entropy(p, train_y[i], w[train_y[i]])
        },
        |h| {
            let probs = predict(h, &val_x)?;
            let loss = weighted_ce_mean(&probs, &val_y, &w);
            Ok((loss, uar_of(&probs, &val_y)?))
        },
    )?;
    let val_uar = fitted.history[fitted.best_epoch - 1].1;
    let test_uar = uar_of(&predict(&fitted.params, &test_x)?, &test_y)?;
    Ok(ProbeResult {
        test_uar,
        val_uar,
        best_epoch: fitted.best_epoch,
        epochs: fitted.history.len(),
    })
}

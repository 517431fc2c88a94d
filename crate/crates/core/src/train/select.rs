use serde::{Deserialize, Serialize};

use super::config::{HyperGrid, TrainConfig};
use super::run::{argmax, train_run, Predictions, RunRecord};
use crate::data::Splits;
use crate::error::{Error, Result};
use crate::model::VariantSpec;

/// Whether a confound UAR sits within `tol` of chance for `classes` classes.
pub fn is_chance(uar: f64, classes: usize, tol: f64) -> bool {
    (uar - 1.0 / classes as f64).abs() <= tol + 1e-12
}

/// Among runs whose best-epoch validation confound UAR is at chance, the one
/// with the lowest emotion validation loss.
pub fn select_adversarial_checkpoint(records: &[RunRecord], tol: f64) -> Result<&RunRecord> {
    let mut nearest: Option<(f64, &RunRecord)> = None;
    let mut chosen: Option<&RunRecord> = None;
    for r in records {
        let uar = r.best().val_confound_uar.ok_or_else(|| {
            Error::Config(format!("{} has no confound head", r.spec.label()))
        })?;
        let classes = r.spec.confound_classes;
        let gap = (uar - 1.0 / classes as f64).abs();
        if is_chance(uar, classes, tol) {
            if chosen.is_none_or(|c| r.best().val_emotion_loss < c.best().val_emotion_loss) {
                chosen = Some(r);
            }
        } else if nearest.is_none_or(|(g, _)| gap < g) {
            nearest = Some((gap, r));
        }
    }
    chosen.ok_or_else(|| {
        let detail = match nearest {
            Some((_, r)) => format!(
                "nearest miss: seed {} lambda {:?} confound UAR {:.4} vs chance {:.4} ± {tol}",
                r.seed,
                r.spec.lambda,
                r.best().val_confound_uar.unwrap_or(f64::NAN),
                1.0 / r.spec.confound_classes as f64
            ),
            None => "no records".into(),
        };
        Error::NoAdmissibleCheckpoint(detail)
    })
}

/// Averages per-class probabilities across runs, then takes the argmax
/// (ties toward the lower class).
pub fn average_argmax(runs: &[&[Vec<f64>]]) -> Result<Vec<usize>> {
    let first = runs.first().ok_or(Error::EmptyInput("ensemble"))?;
    let n = first.len();
    if runs.iter().any(|r| r.len() != n) {
        return Err(Error::shape("ensemble", "runs cover different sample counts"));
    }
    (0..n)
        .map(|i| {
            let c = first[i].len();
            let mut mean = vec![0.0; c];
            for r in runs {
                if r[i].len() != c {
                    return Err(Error::shape("ensemble", format!("sample {i} class counts differ")));
                }
                for (m, p) in mean.iter_mut().zip(&r[i]) {
                    *m += p;
                }
            }
            mean.iter_mut().for_each(|m| *m /= runs.len() as f64);
            Ok(argmax(&mean))
        })
        .collect()
}

/// Ensemble emotion class per sample over runs that scored the same samples.
pub fn ensemble_predict(runs: &[&Predictions]) -> Result<Vec<usize>> {
    let first = runs.first().ok_or(Error::EmptyInput("ensemble"))?;
    if runs.iter().any(|r| r.ids != first.ids) {
        return Err(Error::shape("ensemble", "runs cover different samples"));
    }
    let probs: Vec<&[Vec<f64>]> = runs.iter().map(|r| r.emotion_probs.as_slice()).collect();
    average_argmax(&probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTrial {
    pub spec: VariantSpec,
    pub val_emotion_uar: f64,
    pub val_confound_uar: Option<f64>,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best: VariantSpec,
    pub trials: Vec<GridTrial>,
}

/// Trains every grid point once with the first configured seed. Normal
/// specs rank by validation emotion UAR; adversarial specs must first be at
/// chance on the confound. Earlier grid points win ties.
pub fn grid_search(base: &VariantSpec, grid: &HyperGrid, splits: &Splits<'_>, cfg: &TrainConfig) -> Result<GridOutcome> {
    cfg.validate()?;
    let specs = grid.enumerate(base);
    if specs.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    let seed = cfg.seeds[0];
    let mut trials = Vec::with_capacity(specs.len());
    for spec in specs {
        let r = train_run(&spec, splits, cfg, seed)?;
        let b = r.best();
        let admissible = match b.val_confound_uar {
            Some(u) => is_chance(u, spec.confound_classes, cfg.chance_tolerance),
            None => true,
        };
        log::debug!("grid {} -> emotion UAR {:.4}", spec.fingerprint(), b.val_emotion_uar);
        trials.push(GridTrial {
            val_emotion_uar: b.val_emotion_uar,
            val_confound_uar: b.val_confound_uar,
            admissible,
            spec,
        });
    }
    let mut best: Option<&GridTrial> = None;
    for t in trials.iter().filter(|t| t.admissible) {
        if best.is_none_or(|b| t.val_emotion_uar > b.val_emotion_uar) {
            best = Some(t);
        }
    }
    let best = best
        .ok_or_else(|| Error::NoAdmissibleCheckpoint(format!("none of {} grid points is at chance", trials.len())))?
        .spec
        .clone();
    Ok(GridOutcome { best, trials })
}

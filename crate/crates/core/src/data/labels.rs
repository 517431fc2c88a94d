use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOW: usize = 0;
pub const MID: usize = 1;
pub const HIGH: usize = 2;

pub const MIN_DURATION_S: f64 = 3.0;
pub const MAX_DURATION_S: f64 = 35.0;

/// Likert scale a corpus used for its emotion ratings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingScale {
    NinePoint,
    FivePoint,
}

/// Emotion class and confound class of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelBins {
    pub emotion: usize,
    pub confound: usize,
}

/// Nine-point mean rating: low `[1, 4.5]`, mid `(4.5, 5.5]`, high `(5.5, 9]`.
pub fn bin_muse_rating(mean_rating: f64) -> Result<usize> {
    if !(1.0..=9.0).contains(&mean_rating) {
        return Err(Error::OutOfScale {
            value: mean_rating,
            scale: "nine-point",
        });
    }
    Ok(if mean_rating <= 4.5 {
        LOW
    } else if mean_rating <= 5.5 {
        MID
    } else {
        HIGH
    })
}

/// Five-point mean rating: low `[1, 2.75]`, mid `(2.75, 3.25]`, high `(3.25, 5]`.
pub fn bin_five_point_rating(mean_rating: f64) -> Result<usize> {
    if !(1.0..=5.0).contains(&mean_rating) {
        return Err(Error::OutOfScale {
            value: mean_rating,
            scale: "five-point",
        });
    }
    Ok(if mean_rating <= 2.75 {
        LOW
    } else if mean_rating <= 3.25 {
        MID
    } else {
        HIGH
    })
}

pub fn bin_rating(scale: RatingScale, mean_rating: f64) -> Result<usize> {
    match scale {
        RatingScale::NinePoint => bin_muse_rating(mean_rating),
        RatingScale::FivePoint => bin_five_point_rating(mean_rating),
    }
}

/// Perceived-stress questionnaire sum with the item at `question3_index`
/// counted twice.
pub fn adjusted_pss(items: &[f64], question3_index: usize) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyInput("adjusted_pss"));
    }
    let doubled = *items.get(question3_index).ok_or(Error::IndexOutOfRange {
        index: question3_index,
        len: items.len(),
    })?;
    Ok(items.iter().sum::<f64>() + doubled)
}

/// Stress level around the population mean: low `≤ mean-2`, mid `(mean-2, mean+2]`,
/// high above.
pub fn bin_stress(adjusted_score: f64, population_mean: f64) -> usize {
    if adjusted_score <= population_mean - 2.0 {
        LOW
    } else if adjusted_score <= population_mean + 2.0 {
        MID
    } else {
        HIGH
    }
}

/// Whether an utterance length is inside the kept `[3 s, 35 s]` range.
pub fn duration_in_range(duration_s: f64) -> bool {
    (MIN_DURATION_S..=MAX_DURATION_S).contains(&duration_s)
}

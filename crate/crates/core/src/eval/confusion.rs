use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_predictions(classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape(
                "confusion matrix",
                format!("{} labels vs {} predictions", truth.len(), pred.len()),
            ));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn from_counts(rows: Vec<Vec<u64>>) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion matrix", "counts must be square"));
        }
        Ok(Self {
            classes: c,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for i in [truth, pred] {
            if i >= self.classes {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn support(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn recall(&self, class: usize) -> Result<f64> {
        let n = self.support(class);
        if n == 0 {
            return Err(Error::EmptyClass(class));
        }
        Ok(self.get(class, class) as f64 / n as f64)
    }

    /// Rows scaled to percentages of their support.
    pub fn row_percentages(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.classes)
            .map(|r| {
                let n = self.support(r);
                if n == 0 {
                    return Err(Error::EmptyClass(r));
                }
                Ok(self.row(r).iter().map(|&c| 100.0 * c as f64 / n as f64).collect())
            })
            .collect()
    }
}

/// Mean per-class recall; every class must have support.
pub fn uar(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.classes() == 0 {
        return Err(Error::EmptyInput("uar"));
    }
    let mut s = 0.0;
    for c in 0..cm.classes() {
        s += cm.recall(c)?;
    }
    Ok(s / cm.classes() as f64)
}

/// Mean recall over the classes that occur. Used where a subset (one speaker,
/// one partition) need not contain every class.
pub fn uar_present(cm: &ConfusionMatrix) -> Result<f64> {
    let present: Vec<usize> = (0..cm.classes()).filter(|&c| cm.support(c) > 0).collect();
    if present.is_empty() {
        return Err(Error::EmptyInput("uar_present"));
    }
    let s: f64 = present.iter().map(|&c| cm.recall(c).expect("supported")).sum();
    Ok(s / present.len() as f64)
}

/// Row-normalized adversarial minus normal, in percentage points.
pub fn confusion_delta(normal: &ConfusionMatrix, adversarial: &ConfusionMatrix) -> Result<Vec<Vec<f64>>> {
    if normal.classes() != adversarial.classes() {
        return Err(Error::shape("confusion_delta", "class counts differ"));
    }
    for c in 0..normal.classes() {
        if normal.support(c) != adversarial.support(c) {
            return Err(Error::shape(
                "confusion_delta",
                format!("class {c} support differs; matrices must cover the same samples"),
            ));
        }
    }
    let (a, b) = (normal.row_percentages()?, adversarial.row_percentages()?);
    Ok(a.iter()
        .zip(&b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| y - x).collect())
        .collect())
}

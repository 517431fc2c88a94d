use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{bh_adjust, pearson_p, pearson_r};
use crate::error::{Error, Result};
use crate::features::{LexicalFeatureVector, FEATURE_NAMES};

pub const APS_RUNS: usize = 15;

/// Adjusted probability of success of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsRecord {
    pub sample_id: String,
    pub successes_adv: usize,
    pub successes_normal: usize,
    pub runs: usize,
    pub aps: f64,
}

impl ApsRecord {
    pub fn p_adv(&self) -> f64 {
        self.successes_adv as f64 / self.runs as f64
    }

    pub fn p_normal(&self) -> f64 {
        self.successes_normal as f64 / self.runs as f64
    }
}

/// Success rate of the adversarial runs minus that of the normal runs.
pub fn aps(sample_id: &str, adv: &[bool], normal: &[bool]) -> Result<ApsRecord> {
    if adv.len() != normal.len() {
        return Err(Error::shape(
            "aps",
            format!("{} adversarial vs {} normal runs", adv.len(), normal.len()),
        ));
    }
    if adv.is_empty() {
        return Err(Error::EmptyInput("aps"));
    }
    let runs = adv.len();
    let sa = adv.iter().filter(|&&b| b).count();
    let sn = normal.iter().filter(|&&b| b).count();
    Ok(ApsRecord {
        sample_id: sample_id.to_string(),
        successes_adv: sa,
        successes_normal: sn,
        runs,
        aps: (sa as f64 - sn as f64) / runs as f64,
    })
}

/// Correlation of one lexical feature with APS. `r`, `p_raw` and `p_adjusted`
/// are `None` when the correlation is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub feature: String,
    pub r: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub undefined: bool,
    pub code: String,
}

pub fn significance_code(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "-"
    } else {
        ""
    }
}

/// One row per lexical feature. Raw p comes from the t-transform of r; the
/// adjustment runs over the defined rows and the code uses the adjusted p.
pub fn aps_correlation_report(
    records: &[ApsRecord],
    features: &BTreeMap<String, LexicalFeatureVector>,
) -> Result<Vec<CorrelationResult>> {
    let mut columns = vec![Vec::with_capacity(records.len()); FEATURE_NAMES.len()];
    let mut y = Vec::with_capacity(records.len());
    for rec in records {
        let f = features
            .get(&rec.sample_id)
            .ok_or_else(|| Error::Data(format!("no lexical features for sample {}", rec.sample_id)))?;
        for (col, v) in columns.iter_mut().zip(f.as_slice()) {
            col.push(*v);
        }
        y.push(rec.aps);
    }
    let mut rows: Vec<CorrelationResult> = FEATURE_NAMES
        .iter()
        .zip(&columns)
        .map(|(name, x)| {
            let r = pearson_r(x, &y).ok();
            CorrelationResult {
                feature: name.to_string(),
                r,
                p_raw: r.map(|r| pearson_p(r, y.len())),
                p_adjusted: None,
                undefined: r.is_none(),
                code: String::new(),
            }
        })
        .collect();
    let defined: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i].undefined).collect();
    let raw: Vec<f64> = defined.iter().map(|&i| rows[i].p_raw.expect("defined")).collect();
    for (&i, adj) in defined.iter().zip(bh_adjust(&raw)?) {
        rows[i].p_adjusted = Some(adj);
        rows[i].code = significance_code(adj).to_string();
    }
    Ok(rows)
}

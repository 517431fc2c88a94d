use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BranchHyper, HeadHyper, TrainingMode, VariantSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub lambda_grid: Vec<f64>,
    /// Half-width of the band around 1/C a confound UAR must fall in.
    pub chance_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            patience: 5,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            batch_size: 32,
            seeds: vec![0, 1, 2],
            lambda_grid: vec![0.3, 0.6, 0.8],
            chance_tolerance: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "need 0 < patience ({}) < max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_eps > 0.0) {
            return Err(Error::Config("rmsprop decay must be in [0, 1) and eps > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("lambda grid {:?} has invalid entries", self.lambda_grid)));
        }
        if !(self.chance_tolerance >= 0.0) {
            return Err(Error::Config("chance tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Candidate values per hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub conv_layers: Vec<usize>,
    pub kernel_width: Vec<usize>,
    pub conv_width: Vec<usize>,
    pub pool_width: Vec<usize>,
    pub gru_layers: Vec<usize>,
    pub gru_width: Vec<usize>,
    pub dense_layers: Vec<usize>,
    pub dense_width: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl Default for HyperGrid {
    /// The published search space.
    fn default() -> Self {
        Self {
            conv_layers: vec![3, 4],
            kernel_width: vec![2, 3],
            conv_width: vec![32, 64, 128],
            pool_width: vec![2],
            gru_layers: vec![2, 3],
            gru_width: vec![32],
            dense_layers: vec![1, 2],
            dense_width: vec![32, 64],
            lambda: vec![0.3, 0.6, 0.8],
        }
    }
}

impl HyperGrid {
    /// Grid holding only the values already in `spec`.
    pub fn single(spec: &VariantSpec) -> Self {
        let b = spec.acoustic.or(spec.lexical).unwrap_or_default();
        Self {
            conv_layers: vec![b.conv_layers],
            kernel_width: vec![b.kernel_width],
            conv_width: vec![b.conv_width],
            pool_width: vec![b.pool_width],
            gru_layers: vec![b.gru_layers],
            gru_width: vec![b.gru_width],
            dense_layers: vec![spec.head.dense_layers],
            dense_width: vec![spec.head.dense_width],
            lambda: spec.lambda.into_iter().collect(),
        }
    }

    pub fn branches(&self) -> Vec<BranchHyper> {
        let mut out = Vec::new();
        for &conv_layers in &self.conv_layers {
            for &kernel_width in &self.kernel_width {
                for &conv_width in &self.conv_width {
                    for &pool_width in &self.pool_width {
                        for &gru_layers in &self.gru_layers {
                            for &gru_width in &self.gru_width {
                                out.push(BranchHyper {
                                    conv_layers,
                                    kernel_width,
                                    conv_width,
                                    pool_width,
                                    gru_layers,
                                    gru_width,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn heads(&self) -> Vec<HeadHyper> {
        let mut out = Vec::new();
        for &dense_layers in &self.dense_layers {
            for &dense_width in &self.dense_width {
                out.push(HeadHyper {
                    dense_layers,
                    dense_width,
                });
            }
        }
        out
    }

    /// Every spec of the grid sharing `base`'s mode, target, modality and
    /// dimensions. Branches of a multimodal spec vary independently.
    pub fn enumerate(&self, base: &VariantSpec) -> Vec<VariantSpec> {
        let branches = self.branches();
        let acoustic: Vec<Option<BranchHyper>> = if base.modality.uses_acoustic() {
            branches.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let lexical: Vec<Option<BranchHyper>> = if base.modality.uses_lexical() {
            branches.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let lambdas: Vec<Option<f64>> = match base.training_mode {
            TrainingMode::Adversarial => self.lambda.iter().copied().map(Some).collect(),
            TrainingMode::Normal => vec![None],
        };
        let mut out = Vec::new();
        for a in &acoustic {
            for l in &lexical {
                for head in self.heads() {
                    for lambda in &lambdas {
                        out.push(VariantSpec {
                            acoustic: *a,
                            lexical: *l,
                            head,
                            lambda: *lambda,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

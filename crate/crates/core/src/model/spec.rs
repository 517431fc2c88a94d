use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    Normal,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum EmotionTarget {
    Activation,
    Valence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Acoustic,
    Lexical,
    Multimodal,
}

impl Modality {
    pub fn uses_acoustic(self) -> bool {
        matches!(self, Modality::Acoustic | Modality::Multimodal)
    }

    pub fn uses_lexical(self) -> bool {
        matches!(self, Modality::Lexical | Modality::Multimodal)
    }
}

impl TrainingMode {
    pub const ALL: [TrainingMode; 2] = [TrainingMode::Normal, TrainingMode::Adversarial];
}

impl EmotionTarget {
    pub const ALL: [EmotionTarget; 2] = [EmotionTarget::Activation, EmotionTarget::Valence];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionTarget::Activation => "activation",
            EmotionTarget::Valence => "valence",
        }
    }
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Lexical, Modality::Acoustic, Modality::Multimodal];
}

/// Convolutional/recurrent stack applied to one input stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchHyper {
    pub conv_layers: usize,
    pub kernel_width: usize,
    pub conv_width: usize,
    pub pool_width: usize,
    pub gru_layers: usize,
    pub gru_width: usize,
}

impl Default for BranchHyper {
    fn default() -> Self {
        Self {
            conv_layers: 3,
            kernel_width: 2,
            conv_width: 32,
            pool_width: 2,
            gru_layers: 2,
            gru_width: 32,
        }
    }
}

impl BranchHyper {
    /// Shortest input sequence the convolution stack accepts.
    pub fn min_len(&self) -> usize {
        self.conv_layers * (self.kernel_width - 1) + 1
    }

    fn validate(&self, which: &str) -> Result<()> {
        let checks = [
            ("conv_layers", self.conv_layers, 1, 8),
            ("kernel_width", self.kernel_width, 1, 16),
            ("conv_width", self.conv_width, 1, 1024),
            ("pool_width", self.pool_width, 1, 16),
            ("gru_layers", self.gru_layers, 1, 8),
            ("gru_width", self.gru_width, 1, 1024),
        ];
        for (name, v, lo, hi) in checks {
            if v < lo || v > hi {
                return Err(Error::Config(format!(
                    "{which} branch {name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Dense stack shared by the emotion head and the confound head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadHyper {
    /// Hidden dense layers before the softmax output layer.
    pub dense_layers: usize,
    pub dense_width: usize,
}

impl Default for HeadHyper {
    fn default() -> Self {
        Self {
            dense_layers: 1,
            dense_width: 32,
        }
    }
}

pub const EMOTION_CLASSES: usize = 3;
pub const MFB_DIM: usize = 40;
pub const WORD_DIM: usize = 300;

/// One concrete network variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub training_mode: TrainingMode,
    pub emotion_target: EmotionTarget,
    pub modality: Modality,
    pub acoustic: Option<BranchHyper>,
    pub lexical: Option<BranchHyper>,
    pub head: HeadHyper,
    /// Gradient reversal scale; present iff the mode is adversarial.
    pub lambda: Option<f64>,
    pub acoustic_dim: usize,
    pub lexical_dim: usize,
    /// 3 for stress levels, 2 for scripted/improvised.
    pub confound_classes: usize,
}

impl VariantSpec {
    /// Variant with default (smallest-grid) hyperparameters and λ = 0.6 when adversarial.
    pub fn new(training_mode: TrainingMode, emotion_target: EmotionTarget, modality: Modality) -> Self {
        Self {
            training_mode,
            emotion_target,
            modality,
            acoustic: modality.uses_acoustic().then(BranchHyper::default),
            lexical: modality.uses_lexical().then(BranchHyper::default),
            head: HeadHyper::default(),
            lambda: (training_mode == TrainingMode::Adversarial).then_some(0.6),
            acoustic_dim: MFB_DIM,
            lexical_dim: WORD_DIM,
            confound_classes: 3,
        }
    }

    /// The 2 × 2 × 3 cross product of mode, target and modality.
    pub fn all_variants() -> Vec<VariantSpec> {
        let mut out = Vec::with_capacity(12);
        for mode in TrainingMode::ALL {
            for target in EmotionTarget::ALL {
                for modality in Modality::ALL {
                    out.push(VariantSpec::new(mode, target, modality));
                }
            }
        }
        out
    }

    pub fn is_adversarial(&self) -> bool {
        self.training_mode == TrainingMode::Adversarial
    }

    pub fn validate(&self) -> Result<()> {
        match (self.modality.uses_acoustic(), &self.acoustic) {
            (true, Some(b)) => b.validate("acoustic")?,
            (false, None) => {}
            _ => {
                return Err(Error::Config(
                    "acoustic branch must be present iff the modality uses it".into(),
                ))
            }
        }
        match (self.modality.uses_lexical(), &self.lexical) {
            (true, Some(b)) => b.validate("lexical")?,
            (false, None) => {}
            _ => {
                return Err(Error::Config(
                    "lexical branch must be present iff the modality uses it".into(),
                ))
            }
        }
        if self.head.dense_layers > 8 || self.head.dense_width == 0 || self.head.dense_width > 1024 {
            return Err(Error::Config(format!("head hyperparameters out of bounds: {:?}", self.head)));
        }
        match (self.training_mode, self.lambda) {
            (TrainingMode::Adversarial, Some(l)) if l >= 0.0 && l.is_finite() => {}
            (TrainingMode::Normal, None) => {}
            (mode, l) => {
                return Err(Error::Config(format!(
                    "lambda {l:?} inconsistent with training mode {mode:?}"
                )))
            }
        }
        if !(2..=3).contains(&self.confound_classes) {
            return Err(Error::Config(format!(
                "confound classes must be 2 or 3, got {}",
                self.confound_classes
            )));
        }
        if self.acoustic_dim == 0 || self.lexical_dim == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Length of the representation fed to the heads.
    pub fn embedding_dim(&self) -> usize {
        self.acoustic.map_or(0, |b| b.gru_width) + self.lexical.map_or(0, |b| b.gru_width)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Short tag such as `adversarial/activation/multimodal`.
    pub fn label(&self) -> String {
        let mode = match self.training_mode {
            TrainingMode::Normal => "normal",
            TrainingMode::Adversarial => "adversarial",
        };
        let target = match self.emotion_target {
            EmotionTarget::Activation => "activation",
            EmotionTarget::Valence => "valence",
        };
        let modality = match self.modality {
            Modality::Acoustic => "acoustic",
            Modality::Lexical => "lexical",
            Modality::Multimodal => "multimodal",
        };
        format!("{mode}/{target}/{modality}")
    }
}

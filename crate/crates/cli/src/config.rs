use std::fs;
use std::path::{Path, PathBuf};

use deconf::data::SyntheticConfig;
use deconf::model::{BranchHyper, EmotionTarget, HeadHyper, Modality, TrainingMode};
use deconf::train::{HyperGrid, TrainConfig};
use deconf::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Speaker-independent k-fold cross-validation on one corpus.
    #[default]
    CrossValidation,
    /// Train on some confound levels, test on a held-out level.
    Partition,
    /// Train on the manifest, test on `target_manifest`.
    CrossCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    /// Word vectors; required by lexical and multimodal models.
    pub embeddings: Option<PathBuf>,
    /// Category lexicon for the lexical feature vectors.
    pub lexicon: Option<PathBuf>,
    /// Drop utterances outside the accepted duration range.
    pub duration_filter: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            embeddings: None,
            lexicon: None,
            duration_filter: true,
        }
    }
}

/// Mode, target and modality shared by every model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantConfig {
    pub emotion_target: EmotionTarget,
    pub modality: Modality,
    pub modes: Vec<TrainingMode>,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            emotion_target: EmotionTarget::Activation,
            modality: Modality::Acoustic,
            modes: vec![TrainingMode::Normal, TrainingMode::Adversarial],
        }
    }
}

/// Fixed hyperparameters. Adversarial runs sweep `train.lambda_grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SpecConfig {
    pub acoustic: BranchHyper,
    pub lexical: BranchHyper,
    pub head: HeadHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub folds: usize,
    /// Fold indices to run; empty runs all.
    pub fold_subset: Vec<usize>,
    /// Confound levels held out as targets in partition mode.
    pub held_out_levels: Vec<usize>,
    /// Re-train once per speaker present on both sides of a partition,
    /// holding that speaker out of the source.
    pub leave_one_speaker_out: bool,
    pub target_manifest: Option<PathBuf>,
    pub target_name: Option<String>,
    /// Train a fresh confound head on each run's frozen embeddings.
    pub probe: bool,
    pub save_checkpoints: bool,
    /// Fail when no λ of a seed gives a chance-level confound UAR; otherwise
    /// keep the nearest run and flag it.
    pub require_admissible: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::CrossValidation,
            folds: 5,
            fold_subset: Vec::new(),
            held_out_levels: vec![0],
            leave_one_speaker_out: false,
            target_manifest: None,
            target_name: None,
            probe: false,
            save_checkpoints: true,
            require_admissible: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds corpus synthesis and speaker splits. Run seeds live in `train.seeds`.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub synthetic: SyntheticConfig,
    pub data: DataConfig,
    pub variant: VariantConfig,
    pub spec: Option<SpecConfig>,
    pub grid: Option<HyperGrid>,
    pub train: TrainConfig,
    pub experiment: ExperimentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            jobs: 1,
            synthetic: SyntheticConfig::default(),
            data: DataConfig::default(),
            variant: VariantConfig::default(),
            spec: None,
            grid: None,
            train: TrainConfig::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file ends in `.json`. Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), one_line(&e))))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.data.manifest);
        fix(&mut self.data.embeddings);
        fix(&mut self.data.lexicon);
        fix(&mut self.experiment.target_manifest);
        fix(&mut self.out);
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory (set `out` or pass --out)".into()))
    }

    /// Checks done before any work starts.
    pub fn validate_for_training(&self) -> Result<()> {
        self.train.validate()?;
        if self.spec.is_some() == self.grid.is_some() {
            return Err(Error::Config("exactly one of [spec] and [grid] must be set".into()));
        }
        if self.variant.modes.is_empty() {
            return Err(Error::Config("variant.modes is empty".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        let manifest = self
            .data
            .manifest
            .as_ref()
            .ok_or_else(|| Error::Config("data.manifest is required".into()))?;
        require_file(manifest, "data.manifest")?;
        if self.variant.modality.uses_lexical() {
            let e = self
                .data
                .embeddings
                .as_ref()
                .ok_or_else(|| Error::Config("lexical models need data.embeddings".into()))?;
            require_file(e, "data.embeddings")?;
        }
        let x = &self.experiment;
        match x.kind {
            ExperimentKind::CrossValidation => {
                if x.folds < 2 {
                    return Err(Error::Config(format!("need at least 2 folds, got {}", x.folds)));
                }
                if let Some(f) = x.fold_subset.iter().find(|&&f| f >= x.folds) {
                    return Err(Error::Config(format!("fold {f} out of range for {} folds", x.folds)));
                }
            }
            ExperimentKind::Partition => {
                if x.held_out_levels.is_empty() {
                    return Err(Error::Config("partition mode needs held_out_levels".into()));
                }
            }
            ExperimentKind::CrossCorpus => {
                let t = x
                    .target_manifest
                    .as_ref()
                    .ok_or_else(|| Error::Config("cross-corpus mode needs experiment.target_manifest".into()))?;
                require_file(t, "experiment.target_manifest")?;
            }
        }
        self.out_dir()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring where outputs go and
    /// how many workers run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.jobs = 1;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what}: {} does not exist", p.display())))
    }
}

pub fn one_line(e: &impl std::fmt::Display) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

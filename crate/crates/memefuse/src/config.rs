//! Experiment configuration and its resolution into a model spec and training plan.

use std::path::{Path, PathBuf};

use memefuse_core::models::{Approach, ModelSpec, PaperConfig};
use memefuse_core::plan::{plan_for, EarlyStopping, TrainingPlan, DEFAULT_PATIENCE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::providers::CheckpointTable;

/// Optional overrides applied on top of the approach's default plan.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOverrides {
    pub lr: Option<f32>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    /// `Some(0)` disables early stopping.
    pub patience: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    /// Defaults to the manifest's directory.
    #[serde(default)]
    pub image_root: Option<PathBuf>,
    pub approach: Approach,
    /// A configuration key such as `cnn` or `resnet50-bilstm`.
    pub model: String,
    /// Explicit architecture; needed only for configurations outside the nine.
    #[serde(default)]
    pub spec: Option<ModelSpec>,
    #[serde(default)]
    pub plan: PlanOverrides,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_offline")]
    pub offline: bool,
    #[serde(default)]
    pub allow_nonpaper: bool,
    #[serde(default)]
    pub checkpoints: CheckpointTable,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_offline() -> bool {
    true
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown model `{0}`; expected one of: {keys}", keys = model_keys())]
    UnknownModel(String),
    #[error("model `{model}` belongs to the {actual} approach, not {requested}")]
    ApproachMismatch {
        model: String,
        requested: Approach,
        actual: Approach,
    },
    #[error("{0} is not one of the nine supported configurations; pass --allow-nonpaper to run it")]
    NonPaper(String),
    #[error("invalid plan: {0}")]
    Plan(String),
}

fn model_keys() -> String {
    PaperConfig::ALL.map(PaperConfig::key).join(", ")
}

/// What a config resolves to once the corpus vocabulary size is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub spec: ModelSpec,
    pub plan: TrainingPlan,
    pub paper_config: Option<PaperConfig>,
}

impl ExperimentConfig {
    pub fn new(manifest: impl Into<PathBuf>, approach: Approach, model: impl Into<String>) -> Self {
        Self {
            manifest: manifest.into(),
            image_root: None,
            approach,
            model: model.into(),
            spec: None,
            plan: PlanOverrides::default(),
            seed: 0,
            out: default_out(),
            offline: true,
            allow_nonpaper: false,
            checkpoints: CheckpointTable::default(),
        }
    }

    pub fn image_root(&self) -> PathBuf {
        self.image_root.clone().unwrap_or_else(|| {
            self.manifest
                .parent()
                .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
        })
    }

    /// Content-addressed id over everything except the output directory.
    pub fn run_id(&self) -> String {
        let mut keyed = self.clone();
        keyed.out = PathBuf::new();
        let json = serde_json::to_vec(&keyed).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.run_id())
    }

    pub fn resolve(&self, vocab_size: usize) -> Result<Resolved, ConfigError> {
        let listed: PaperConfig = self
            .model
            .parse()
            .map_err(|_| ConfigError::UnknownModel(self.model.clone()))?;
        if listed.approach() != self.approach {
            return Err(ConfigError::ApproachMismatch {
                model: self.model.clone(),
                requested: self.approach,
                actual: listed.approach(),
            });
        }
        let spec = match self.spec {
            None => listed.spec(vocab_size),
            Some(ModelSpec::Multimodal { mut model }) => {
                model.vocab_size = vocab_size;
                ModelSpec::Multimodal { model }
            }
            Some(s) => s,
        };
        if spec.approach() != self.approach {
            return Err(ConfigError::ApproachMismatch {
                model: self.model.clone(),
                requested: self.approach,
                actual: spec.approach(),
            });
        }
        let paper_config = spec.paper_config();
        if paper_config.is_none() && !self.allow_nonpaper {
            return Err(ConfigError::NonPaper(format!("{spec:?}")));
        }
        let mut plan = plan_for(self.approach).with_seed(self.seed);
        let o = &self.plan;
        if let Some(lr) = o.lr {
            plan.lr = lr;
        }
        if let Some(e) = o.epochs {
            plan.epochs = e;
        }
        if let Some(b) = o.batch {
            plan.batch = b;
        }
        match o.patience {
            Some(0) => plan.early_stopping = EarlyStopping::Off,
            Some(p) => {
                plan.early_stopping = EarlyStopping::Patience {
                    patience: p,
                    restore_best: true,
                }
            }
            None => {}
        }
        plan.validate().map_err(|e| ConfigError::Plan(e.to_string()))?;
        Ok(Resolved {
            spec,
            plan,
            paper_config,
        })
    }
}

/// Early stopping patience applied when a config enables it without a value.
pub const PATIENCE: usize = DEFAULT_PATIENCE;

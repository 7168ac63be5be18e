//! Training plans: loss, optimizer, schedule and stopping policy for each approach.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Approach;
use crate::optim::OptimizerKind;
use crate::schedule::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    BinaryCrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EarlyStopping {
    Off,
    /// Stop once validation loss has not improved for `patience` consecutive epochs.
    Patience { patience: usize, restore_best: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    BestValLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub loss: Loss,
    pub optimizer: OptimizerKind,
    /// Constant rate, or the peak rate under a one-cycle schedule.
    pub lr: f32,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch: usize,
    pub early_stopping: EarlyStopping,
    pub checkpoint: CheckpointPolicy,
    pub seed: u64,
}

pub const DEFAULT_PATIENCE: usize = 3;

/// Custom CNN and frozen-backbone heads.
pub fn visual_training_plan() -> TrainingPlan {
    TrainingPlan {
        loss: Loss::BinaryCrossEntropy,
        optimizer: OptimizerKind::Rmsprop,
        lr: 1e-3,
        schedule: Schedule::Constant,
        epochs: 50,
        batch: 32,
        early_stopping: EarlyStopping::Off,
        checkpoint: CheckpointPolicy::BestValLoss,
        seed: 0,
    }
}

/// Transformer fine-tuning.
pub fn textual_training_plan() -> TrainingPlan {
    TrainingPlan {
        loss: Loss::BinaryCrossEntropy,
        optimizer: OptimizerKind::OnecycleAdamlike,
        lr: 2e-5,
        schedule: Schedule::one_cycle(),
        epochs: 20,
        batch: 8,
        early_stopping: EarlyStopping::Patience {
            patience: DEFAULT_PATIENCE,
            restore_best: true,
        },
        checkpoint: CheckpointPolicy::BestValLoss,
        seed: 0,
    }
}

/// Early-fusion models.
pub fn fusion_training_plan() -> TrainingPlan {
    TrainingPlan {
        loss: Loss::BinaryCrossEntropy,
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        schedule: Schedule::Constant,
        epochs: 50,
        batch: 32,
        early_stopping: EarlyStopping::Off,
        checkpoint: CheckpointPolicy::BestValLoss,
        seed: 0,
    }
}

pub fn plan_for(approach: Approach) -> TrainingPlan {
    match approach {
        Approach::Visual => visual_training_plan(),
        Approach::Textual => textual_training_plan(),
        Approach::Multimodal => fusion_training_plan(),
    }
}

impl TrainingPlan {
    pub fn lr_peak(&self) -> f32 {
        self.lr
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidPlan(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidPlan("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidPlan("batch must be at least 1".into()));
        }
        if let EarlyStopping::Patience { patience: 0, .. } = self.early_stopping {
            return Err(Error::InvalidPlan("patience must be at least 1".into()));
        }
        if let Schedule::OneCycle {
            warmup_fraction,
            div_factor,
        } = self.schedule
        {
            if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) || div_factor <= 1.0 {
                return Err(Error::InvalidPlan("one-cycle needs 0 < warm-up < 1 and div > 1".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visual_plan_defaults() {
        let p = visual_training_plan();
        assert_eq!((p.lr, p.epochs, p.batch), (1e-3, 50, 32));
        assert_eq!(p.optimizer, OptimizerKind::Rmsprop);
        assert_eq!(p.loss, Loss::BinaryCrossEntropy);
        assert_eq!(p.checkpoint, CheckpointPolicy::BestValLoss);
    }

    #[test]
    fn textual_plan_defaults() {
        let p = textual_training_plan();
        assert_eq!((p.lr_peak(), p.epochs, p.batch), (2e-5, 20, 8));
        assert_ne!(p.early_stopping, EarlyStopping::Off);
        assert!(matches!(p.schedule, Schedule::OneCycle { .. }));
    }

    #[test]
    fn fusion_plan_defaults() {
        let p = fusion_training_plan();
        assert_eq!((p.lr, p.epochs, p.batch), (1e-3, 50, 32));
        assert_eq!(p.optimizer, OptimizerKind::Adam);
        assert_eq!(p.loss, Loss::BinaryCrossEntropy);
    }

    #[test]
    fn validation_rejects_degenerate_plans() {
        assert!(visual_training_plan().validate().is_ok());
        let mut p = visual_training_plan();
        p.lr = 0.0;
        assert!(p.validate().is_err());
        let mut p = fusion_training_plan();
        p.batch = 0;
        assert!(p.validate().is_err());
        let mut p = textual_training_plan();
        p.epochs = 0;
        assert!(p.validate().is_err());
    }
}

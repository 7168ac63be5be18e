//! The training harness: batching, optimization, validation, early stopping and
//! best-model tracking, all seeded from the plan.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, Graph};
use crate::image::{self, ImageTensor};
use crate::label::Label;
use crate::layers::Mode;
use crate::models::{Batch, Model};
use crate::optim::{Optimizer, OptimizerKind};
use crate::params::ParamStore;
use crate::plan::{EarlyStopping, TrainingPlan};
use crate::seed::{SeededRng, Seeds};

/// A record with its image already decoded.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub image: Option<ImageTensor>,
    pub caption: String,
    pub label: Option<Label>,
}

/// Builds the inputs `model` consumes for `examples`, in order.
pub fn make_batch<M: Model + ?Sized>(model: &M, examples: &[&Example]) -> Result<Batch> {
    let kind = model.input_kind();
    let images = if kind.needs_image() {
        let imgs = examples
            .iter()
            .map(|e| e.image.as_ref().ok_or_else(|| Error::MissingImage(e.id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Some(image::stack(&imgs))
    } else {
        None
    };
    let tokens = if kind.needs_text() {
        let captions: Vec<&str> = examples.iter().map(|e| e.caption.as_str()).collect();
        Some(model.encode_text(&captions).ok_or(Error::MissingInput("text encoder"))?)
    } else {
        None
    };
    Ok(Batch { images, tokens })
}

fn targets(examples: &[&Example]) -> Result<Vec<f32>> {
    examples
        .iter()
        .map(|e| {
            e.label
                .map(Label::target)
                .ok_or_else(|| Error::UnlabeledRecord(e.id.clone()))
        })
        .collect()
}

/// Binary cross-entropy of one logit, in f64.
pub fn bce_from_logit(z: f32, target: f32) -> f64 {
    let (z, y) = (z as f64, target as f64);
    z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Parameters at the best epoch.
    pub best: ParamStore,
    pub stopped_early: bool,
}

/// Loss and accuracy over `examples` with dropout disabled.
pub fn evaluate<M: Model + ?Sized>(model: &M, examples: &[Example], batch: usize) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for chunk in examples.chunks(batch.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let t = targets(&refs)?;
        let z = logits(model, &refs, &mut Mode::Eval)?;
        for (z, y) in z.iter().zip(&t) {
            loss += bce_from_logit(*z, *y);
            correct += ((*z >= 0.0) == (*y == 1.0)) as usize;
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn logits<M: Model + ?Sized>(model: &M, examples: &[&Example], mode: &mut Mode<'_>) -> Result<Vec<f32>> {
    let batch = make_batch(model, examples)?;
    let mut g = Graph::new(model.store());
    let z = model.logits(&mut g, &batch, mode)?;
    Ok(g.value(z).data().to_vec())
}

/// Epoch-at-a-time training; [`train`] drives it to completion.
pub struct Trainer<'a, M: Model + ?Sized> {
    model: &'a mut M,
    plan: TrainingPlan,
    train: &'a [Example],
    valid: &'a [Example],
    optimizer: Optimizer,
    shuffle_rng: SeededRng,
    dropout_rng: SeededRng,
    order: Vec<usize>,
    step: usize,
    total_steps: usize,
    history: Vec<EpochRecord>,
    best: Option<(usize, f64, ParamStore)>,
    stale_epochs: usize,
    stopped_early: bool,
}

impl<'a, M: Model + ?Sized> Trainer<'a, M> {
    pub fn new(model: &'a mut M, plan: TrainingPlan, train: &'a [Example], valid: &'a [Example]) -> Result<Self> {
        plan.validate()?;
        if train.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        if valid.is_empty() {
            return Err(Error::EmptySplit("valid"));
        }
        for e in train.iter().chain(valid) {
            if e.label.is_none() {
                return Err(Error::UnlabeledRecord(e.id.clone()));
            }
        }
        let seeds = Seeds::new(plan.seed);
        let per_epoch = train.len().div_ceil(plan.batch);
        Ok(Self {
            model,
            optimizer: Optimizer::new(plan.optimizer),
            shuffle_rng: seeds.shuffle_rng(),
            dropout_rng: seeds.dropout_rng(),
            order: (0..train.len()).collect(),
            step: 0,
            total_steps: per_epoch * plan.epochs,
            history: Vec::new(),
            best: None,
            stale_epochs: 0,
            stopped_early: false,
            plan,
            train,
            valid,
        })
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn model(&self) -> &M {
        self.model
    }

    pub fn is_finished(&self) -> bool {
        self.stopped_early || self.history.len() >= self.plan.epochs
    }

    /// Trains one epoch over a fresh shuffle (last partial batch included), then validates.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.history.len() + 1;
        self.order.shuffle(&mut self.shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, chunk) in self.order.chunks(self.plan.batch).enumerate() {
            let refs: Vec<&Example> = chunk.iter().map(|i| &self.train[*i]).collect();
            let t = targets(&refs)?;
            let batch = make_batch(&*self.model, &refs)?;
            let grads = {
                let mut g = Graph::new(self.model.store());
                let mut mode = Mode::Train(&mut self.dropout_rng);
                let z = self.model.logits(&mut g, &batch, &mut mode)?;
                let loss = g.bce_with_logits(z, &t);
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b + 1,
                        loss: value,
                    });
                }
                loss_sum += value as f64 * refs.len() as f64;
                for (z, y) in g.value(z).data().iter().zip(&t) {
                    correct += ((*z >= 0.0) == (*y == 1.0)) as usize;
                }
                g.backward(loss)
            };
            let lr = self.plan.schedule.lr(self.plan.lr, self.step, self.total_steps);
            let beta1 = match self.plan.optimizer {
                OptimizerKind::OnecycleAdamlike => self.plan.schedule.momentum(self.step, self.total_steps),
                _ => None,
            };
            self.optimizer.step(self.model.store_mut(), &grads, lr, beta1);
            self.step += 1;
        }
        let n = self.train.len() as f64;
        let (val_loss, val_acc) = evaluate(&*self.model, self.valid, self.plan.batch)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        self.history.push(record);
        if self.best.as_ref().is_none_or(|(_, best, _)| val_loss < *best) {
            self.best = Some((epoch, val_loss, self.model.store().clone()));
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if let EarlyStopping::Patience { patience, .. } = self.plan.early_stopping {
                self.stopped_early = self.stale_epochs >= patience;
            }
        }
        Ok(record)
    }

    /// Returns the run record. The model is left at the best epoch's parameters unless
    /// early stopping was configured not to restore them.
    pub fn finish(self) -> Result<RunRecord> {
        let (best_epoch, best_val_loss, best) = self.best.ok_or(Error::EmptyInput)?;
        let keep_last = matches!(
            self.plan.early_stopping,
            EarlyStopping::Patience {
                restore_best: false,
                ..
            }
        );
        if !keep_last {
            self.model.store_mut().load_values(&best)?;
        }
        Ok(RunRecord {
            history: self.history,
            best_epoch,
            best_val_loss,
            best,
            stopped_early: self.stopped_early,
        })
    }
}

pub fn train<M: Model + ?Sized>(
    model: &mut M,
    plan: TrainingPlan,
    train: &[Example],
    valid: &[Example],
) -> Result<RunRecord> {
    let mut trainer = Trainer::new(model, plan, train, valid)?;
    while !trainer.is_finished() {
        trainer.run_epoch()?;
    }
    trainer.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub probability: f32,
}

impl Prediction {
    pub fn label(&self) -> Label {
        Label::from_probability(self.probability)
    }
}

/// Troll probabilities in input order, dropout disabled.
pub fn predict<M: Model + ?Sized>(model: &M, examples: &[Example], batch: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let z = logits(model, &refs, &mut Mode::Eval)?;
        out.extend(chunk.iter().zip(z).map(|(e, z)| Prediction {
            id: e.id.clone(),
            probability: graph::sigmoid(z),
        }));
    }
    Ok(out)
}

/// Early-stopping decision over a sequence of validation losses: the 1-based epoch
/// at which training stops, or `None` if it runs to the end.
pub fn early_stop_epoch(val_losses: &[f64], patience: usize) -> Option<usize> {
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for (i, l) in val_losses.iter().enumerate() {
        if *l < best {
            best = *l;
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                return Some(i + 1);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increasing_loss_after_epoch_two_stops_at_five() {
        let losses = [0.9, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        assert_eq!(early_stop_epoch(&losses, 3), Some(5));
        assert_eq!(early_stop_epoch(&[0.5, 0.4, 0.3], 3), None);
    }

    #[test]
    fn bce_matches_definition() {
        for (z, y) in [(0.3f32, 1.0f32), (-2.0, 0.0), (4.0, 0.0), (0.0, 1.0)] {
            let p = 1.0 / (1.0 + libm::exp(-(z as f64)));
            let direct = -(y as f64 * libm::log(p) + (1.0 - y as f64) * libm::log(1.0 - p));
            assert!((bce_from_logit(z, y) - direct).abs() < 1e-12);
        }
        assert!(bce_from_logit(200.0, 0.0).is_finite());
    }
}

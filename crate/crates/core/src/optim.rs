//! First-order optimizers with Keras default hyperparameters.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
    /// Adam whose learning rate and first-moment decay follow the one-cycle schedule.
    OnecycleAdamlike,
}

const RMS_RHO: f32 = 0.9;
const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const EPSILON: f32 = 1e-7;

#[derive(Clone, Debug)]
struct Slots {
    first: Vec<f32>,
    second: Vec<f32>,
}

/// Optimizer state; frozen parameters and parameters without a gradient are never touched.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    steps: u64,
    /// Running products of the first/second moment decays, for bias correction.
    beta1_power: f64,
    beta2_power: f64,
    slots: BTreeMap<ParamId, Slots>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            steps: 0,
            beta1_power: 1.0,
            beta2_power: 1.0,
            slots: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update at learning rate `lr`; `beta1` overrides the first-moment decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f32, beta1: Option<f32>) {
        self.steps += 1;
        let b1 = beta1.unwrap_or(BETA1);
        self.beta1_power *= b1 as f64;
        self.beta2_power *= BETA2 as f64;
        let correction = (libm::sqrt(1.0 - self.beta2_power) / (1.0 - self.beta1_power)) as f32;
        for (id, grad) in grads.iter() {
            let param = store.get_mut(id);
            if !param.trainable {
                continue;
            }
            let n = grad.len();
            let slots = self.slots.entry(id).or_insert_with(|| Slots {
                first: alloc::vec![0.0; n],
                second: alloc::vec![0.0; n],
            });
            let w = param.value.data_mut();
            let g = grad.data();
            match self.kind {
                OptimizerKind::Rmsprop => {
                    for i in 0..n {
                        let v = &mut slots.second[i];
                        *v = RMS_RHO * *v + (1.0 - RMS_RHO) * g[i] * g[i];
                        w[i] -= lr * g[i] / (libm::sqrtf(*v) + EPSILON);
                    }
                }
                OptimizerKind::Adam | OptimizerKind::OnecycleAdamlike => {
                    let lr_t = lr * correction;
                    for i in 0..n {
                        let m = &mut slots.first[i];
                        *m = b1 * *m + (1.0 - b1) * g[i];
                        let v = &mut slots.second[i];
                        *v = BETA2 * *v + (1.0 - BETA2) * g[i] * g[i];
                        w[i] -= lr_t * *m / (libm::sqrtf(*v) + EPSILON);
                    }
                }
            }
        }
    }
}

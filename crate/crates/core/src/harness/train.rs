use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::HarnessError;
use crate::micronet::{cross_entropy, softmax, Adam, AdamConfig, Model, ModelSpec, Tensor};
use crate::seed::derive_seed;

/// How a plateau firing changes the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlateauReduction {
    /// lr ← lr · factor
    Multiply,
    /// lr ← lr · (1 − factor)
    Subtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPolicy {
    pub lr: f64,
    pub reduction: PlateauReduction,
    pub factor: f64,
    pub sched_patience: usize,
    pub min_delta: f64,
    pub stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainPolicy {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            reduction: PlateauReduction::Multiply,
            factor: 0.2,
            sched_patience: 3,
            min_delta: 1e-4,
            stop_patience: 10,
            max_epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainPolicy {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive");
        }
        if self.sched_patience == 0 || self.stop_patience == 0 {
            return bad("patience values must be positive");
        }
        if self.min_delta < 0.0 {
            return bad("min_delta must be ≥ 0");
        }
        Ok(())
    }

    /// Learning rate after `firings` scheduler reductions.
    pub fn lr_after(&self, firings: usize) -> f64 {
        let m = match self.reduction {
            PlateauReduction::Multiply => self.factor,
            PlateauReduction::Subtract => 1.0 - self.factor,
        };
        self.lr * m.powi(firings as i32)
    }
}

/// Outcome of feeding one validation loss to the plateau logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauEvent {
    pub improved: bool,
    pub fired: bool,
    pub stop: bool,
}

/// Shared best-loss tracking for the LR scheduler and early stopping.
#[derive(Debug, Clone)]
pub struct Plateau {
    best: f64,
    sched_bad: usize,
    stop_bad: usize,
    pub firings: usize,
    sched_patience: usize,
    stop_patience: usize,
    min_delta: f64,
}

impl Plateau {
    pub fn new(policy: &TrainPolicy) -> Self {
        Self {
            best: f64::INFINITY,
            sched_bad: 0,
            stop_bad: 0,
            firings: 0,
            sched_patience: policy.sched_patience,
            stop_patience: policy.stop_patience,
            min_delta: policy.min_delta,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauEvent {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.sched_bad = 0;
            self.stop_bad = 0;
            return PlateauEvent {
                improved: true,
                fired: false,
                stop: false,
            };
        }
        self.sched_bad += 1;
        self.stop_bad += 1;
        let fired = self.sched_bad >= self.sched_patience;
        if fired {
            self.firings += 1;
            self.sched_bad = 0;
        }
        PlateauEvent {
            improved: false,
            fired,
            stop: self.stop_bad >= self.stop_patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub final_lr: f64,
}

/// Samples per forward call during evaluation.
const EVAL_CHUNK: usize = 16;

fn batched_logits(model: &Model<f32>, samples: &[&Sample]) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let inputs: Vec<&[Tensor<f32>]> = chunk.iter().map(|s| s.inputs.as_slice()).collect();
        out.extend(model.forward_batch(&inputs)?);
    }
    Ok(out)
}

pub fn mean_loss(model: &Model<f32>, samples: &[&Sample]) -> Result<f64, HarnessError> {
    let logits = batched_logits(model, samples)?;
    let total: f64 = logits
        .iter()
        .zip(samples)
        .map(|(l, s)| cross_entropy(l, s.label).0)
        .sum();
    Ok(total / samples.len() as f64)
}

/// Mini-batch Adam on the training set, checkpointing the parameters of
/// the epoch with the lowest validation loss.
pub fn train_model(
    spec: ModelSpec,
    train: &[&Sample],
    val: &[&Sample],
    policy: &TrainPolicy,
    seed: u64,
) -> Result<(Model<f32>, TrainCurve), HarnessError> {
    policy.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(HarnessError::InvalidConfig(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    let mut model = Model::<f32>::new(spec, derive_seed(seed, &[0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut adam = Adam::new(policy.adam, &model.params);
    let mut grads = model.zero_grads();
    let mut plateau = Plateau::new(policy);
    let mut best = model.params.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=policy.max_epochs {
        let lr = policy.lr_after(plateau.firings);
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for batch in order.chunks(policy.batch_size) {
            grads.zero();
            let items: Vec<(&[Tensor<f32>], usize)> = batch
                .iter()
                .map(|&i| (train[i].inputs.as_slice(), train[i].label))
                .collect();
            train_total += model.batch_loss_and_grad(&items, &mut grads)?;
            grads.scale(1.0 / batch.len() as f32);
            adam.step(&mut model.params, &grads, lr)?;
        }
        let val_loss = mean_loss(&model, val)?;
        let ev = plateau.observe(val_loss);
        if ev.improved {
            best.clone_from(&model.params);
            best_epoch = epoch;
        }
        epochs.push(EpochLog {
            epoch,
            train_loss: train_total / train.len() as f64,
            val_loss,
            lr,
            improved: ev.improved,
        });
        if ev.stop {
            stopped_early = true;
            break;
        }
    }
    let final_lr = policy.lr_after(plateau.firings);
    model.params = best;
    Ok((
        model,
        TrainCurve {
            epochs,
            best_epoch,
            best_val_loss: plateau.best(),
            stopped_early,
            final_lr,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub task: crate::telemetry::Task,
    pub label: usize,
    /// Softmax probability of the positive class.
    pub score: f64,
    /// Argmax decision.
    pub pred: usize,
}

pub fn predict(model: &Model<f32>, samples: &[&Sample]) -> Result<Vec<Prediction>, HarnessError> {
    let logits = batched_logits(model, samples)?;
    Ok(samples
        .iter()
        .zip(logits)
        .map(|(s, logits)| {
            let probs = softmax(&logits);
            Prediction {
                subject_id: s.subject_id.clone(),
                task: s.task,
                label: s.label,
                score: probs[1],
                pred: usize::from(logits[1] > logits[0]),
            }
        })
        .collect())
}

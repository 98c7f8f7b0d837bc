//! Training: inverse-frequency class weights, Adam, step decay, early
//! stopping on validation accuracy, and the epoch loop in [`fit`].
//!
//! The loop is deterministic for a given seed, configuration and data:
//! shuffling uses a seeded ChaCha stream and every parallel kernel writes
//! its outputs in a fixed order.

mod optim;
mod schedule;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use optim::{Adam, AdamConfig};
pub use schedule::{
    class_weights, lr_at, ClassWeights, EarlyStopping, StepDecay, StopDecision, MIN_IMPROVEMENT,
};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dataset::PreparedSet;
use crate::error::{Error, Result};
use crate::model::{positive_column, HeadKind, Mode, Model, ParamKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            decay_factor: 0.5,
            decay_every: 10,
            patience: 15,
            max_epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.adam.eps, self.decay_factor]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        let betas = [self.adam.beta1, self.adam.beta2]
            .iter()
            .all(|b| (0.0..1.0).contains(b));
        let counts =
            self.decay_every > 0 && self.patience > 0 && self.max_epochs > 0 && self.batch_size > 0;
        if !(positive && betas && counts) {
            return Err(Error::ConfigInvalid(format!(
                "invalid training configuration {self:?}"
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::ConfigInvalid(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base_lr: self.learning_rate,
            decay_factor: self.decay_factor,
            decay_every: self.decay_every,
        }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("decay_every", self.decay_every.to_string()),
            ("patience", self.patience.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Overrides fields from `key = value` pairs; unknown keys are ignored.
    pub fn apply_pairs(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {v:?}")))
        }
        for (key, v) in pairs {
            match key.as_str() {
                "learning_rate" => self.learning_rate = parse(key, v)?,
                "adam_beta1" => self.adam.beta1 = parse(key, v)?,
                "adam_beta2" => self.adam.beta2 = parse(key, v)?,
                "adam_eps" => self.adam.eps = parse(key, v)?,
                "decay_factor" => self.decay_factor = parse(key, v)?,
                "decay_every" => self.decay_every = parse(key, v)?,
                "patience" => self.patience = parse(key, v)?,
                "max_epochs" => self.max_epochs = parse(key, v)?,
                "batch_size" => self.batch_size = parse(key, v)?,
                "seed" => self.seed = parse(key, v)?,
                _ => {}
            }
        }
        self.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// The snapshot with the best validation accuracy.
    pub best: Model,
    /// The model as it stood after the last epoch.
    pub last: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the best snapshot.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl FitOutcome {
    /// First epoch whose validation accuracy reached `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.history
            .iter()
            .find(|r| r.val_accuracy >= target)
            .map(|r| r.epoch)
    }
}

/// Loss and per-parameter gradients for one training-mode batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    /// Gradients of trainable parameters, keyed by parameter index.
    pub grads: Vec<(usize, Vec<f64>)>,
}

fn targets_tensor(model: &Model, set: &PreparedSet, idx: &[usize]) -> Result<Tensor> {
    let k = model.config().head_outputs();
    let mut t = vec![0.0; idx.len() * k];
    for (row, &i) in idx.iter().enumerate() {
        t[row * k + set.items[i].label.class_index()] = 1.0;
    }
    Tensor::new([idx.len(), k], t)
}

fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    probs: Var,
    set: &PreparedSet,
    idx: &[usize],
    weights: &ClassWeights,
) -> Result<Var> {
    match model.config().head {
        HeadKind::Softmax => {
            if weights.weights.len() != model.config().num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "{} class weights for {} classes",
                    weights.weights.len(),
                    model.config().num_classes
                )));
            }
            let targets = targets_tensor(model, set, idx)?;
            tape.weighted_cce(probs, &targets, &weights.weights)
        }
        HeadKind::Sigmoid => {
            let w: [f64; 2] =
                weights.weights.as_slice().try_into().map_err(|_| {
                    Error::ShapeMismatch("sigmoid head needs two class weights".into())
                })?;
            let targets: Vec<f64> = idx
                .iter()
                .map(|&i| set.items[i].label.class_index() as f64)
                .collect();
            tape.weighted_bce(probs, &targets, w)
        }
    }
}

/// Runs a training-mode forward and backward pass on `idx` without
/// touching the model.
pub fn batch_gradients(
    model: &Model,
    set: &PreparedSet,
    idx: &[usize],
    weights: &ClassWeights,
) -> Result<BatchGradients> {
    let (grads, loss, _) = forward_backward(model, set, idx, weights)?;
    Ok(BatchGradients { loss, grads })
}

type GradsAndPass = (Vec<(usize, Vec<f64>)>, f64, crate::model::ForwardPass);

fn forward_backward(
    model: &Model,
    set: &PreparedSet,
    idx: &[usize],
    weights: &ClassWeights,
) -> Result<GradsAndPass> {
    let mut tape = Tape::new();
    let x = tape.leaf(set.batch(idx)?, false);
    let pass = model.forward(&mut tape, x, Mode::Train)?;
    let loss = batch_loss(model, &mut tape, pass.probs, set, idx, weights)?;
    tape.backward(loss)?;
    let loss_value = tape.value(loss).data()[0];
    let mut grads: Vec<(usize, Vec<f64>)> = pass
        .param_vars
        .iter()
        .map(|&(p, v)| {
            let g = tape
                .grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; model.params()[p].value.len()]);
            (p, g)
        })
        .collect();
    grads.sort_by_key(|(p, _)| *p);
    Ok((grads, loss_value, pass))
}

fn apply_adam(
    model: &mut Model,
    adam: &mut Adam,
    lr: f64,
    grads: &[(usize, Vec<f64>)],
) -> Result<()> {
    let mut by_index: Vec<Option<&[f64]>> = vec![None; model.params().len()];
    for (p, g) in grads {
        by_index[*p] = Some(g);
    }
    let slots = model
        .params_mut()
        .iter_mut()
        .zip(by_index)
        .filter(|(p, _)| p.kind == ParamKind::Trainable)
        .filter_map(|(p, g)| g.map(|g| (p.value.data_mut(), g)));
    adam.step(lr, slots)
}

/// Recording-level accuracy: argmax for softmax, `p ≥ 0.5` for sigmoid.
pub fn accuracy(model: &Model, set: &PreparedSet, chunk: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs = predict_set(model, set, chunk)?;
    let correct = probs
        .iter()
        .zip(&set.items)
        .filter(|(p, item)| (**p >= 0.5) == item.label.is_positive())
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Positive-class probability for every item, scored in chunks.
pub fn predict_set(model: &Model, set: &PreparedSet, chunk: usize) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for idx in all.chunks(chunk.max(1)) {
        let probs = model.predict(&set.batch(idx)?)?;
        out.extend(positive_column(&probs, model.config().head));
    }
    Ok(out)
}

/// Trains `model` on `train`, selecting the snapshot with the best
/// validation accuracy.
pub fn fit(
    model: Model,
    train: &PreparedSet,
    val: &PreparedSet,
    cfg: &TrainConfig,
    weights: &ClassWeights,
) -> Result<FitOutcome> {
    fit_with(model, train, val, cfg, weights, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<F: FnMut(&EpochRecord)>(
    mut model: Model,
    train: &PreparedSet,
    val: &PreparedSet,
    cfg: &TrainConfig,
    weights: &ClassWeights,
    mut on_epoch: F,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, &cfg.schedule());
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (grads, loss, pass) = forward_backward(&model, train, idx, weights)?;
            if !loss.is_finite() {
                return Err(Error::ConfigInvalid(format!(
                    "loss became {loss} at epoch {}",
                    epoch + 1
                )));
            }
            model.apply_running_updates(&pass);
            apply_adam(&mut model, &mut adam, lr, &grads)?;
            loss_sum += loss * idx.len() as f64;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy: accuracy(&model, val, cfg.batch_size)?,
            lr,
        };
        log::info!(
            "epoch {} loss {:.6} val_acc {:.4} lr {:e}",
            record.epoch,
            record.train_loss,
            record.val_accuracy,
            record.lr
        );
        on_epoch(&record);
        history.push(record);
        match stopper.update(record.val_accuracy) {
            StopDecision::Improved => {
                best = model.clone();
                best_epoch = record.epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(FitOutcome {
        best,
        last: model,
        history,
        best_epoch,
        stopped_early,
    })
}

/// Renders `history.csv`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_accuracy,lr\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch, r.train_loss, r.val_accuracy, r.lr
        );
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, history_csv(history))?;
    Ok(())
}

use crate::error::{Error, Result};
use crate::signal_io::Label;

/// Inverse-frequency class weights, `W_i = N / (K · n_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub total: usize,
}

impl ClassWeights {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingClass(missing));
        }
        let total: usize = counts.iter().sum();
        let k = counts.len() as f64;
        Ok(Self {
            weights: counts
                .iter()
                .map(|&c| total as f64 / (k * c as f64))
                .collect(),
            class_counts: counts.to_vec(),
            total,
        })
    }

    /// All-ones weights for `k` classes.
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
            class_counts: Vec::new(),
            total: 0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }
}

/// Class weights for binary labels, indexed `[negative, positive]`.
pub fn class_weights(labels: &[Label]) -> Result<ClassWeights> {
    let mut counts = [0usize; Label::NUM_CLASSES];
    for l in labels {
        counts[l.class_index()] += 1;
    }
    ClassWeights::from_counts(&counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

/// Learning rate for a 0-based epoch: `base · factor^⌊epoch / every⌋`.
pub fn lr_at(epoch: usize, schedule: &StepDecay) -> f64 {
    let drops = epoch / schedule.decay_every.max(1);
    schedule.base_lr
        * schedule
            .decay_factor
            .powi(i32::try_from(drops).unwrap_or(i32::MAX))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best; the caller should snapshot its weights.
    Improved,
    Continue,
    /// Patience exhausted; the caller should restore the snapshot.
    Stop,
}

/// Minimum gain in validation accuracy that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_improvement: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    pub fn update(&mut self, val_accuracy: f64) -> StopDecision {
        let improved = self
            .best
            .map_or(true, |b| val_accuracy - b >= MIN_IMPROVEMENT);
        if improved {
            self.best = Some(val_accuracy);
            self.since_improvement = 0;
            return StopDecision::Improved;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

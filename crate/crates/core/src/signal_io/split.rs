//! Patient-wise stratified splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::ConfigInvalid(format!(
                "split fractions {fractions:?} outside [0, 1]"
            )));
        }
        if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigInvalid(format!(
                "split fractions {fractions:?} do not sum to 1"
            )));
        }
        Ok(())
    }
}

/// Rounds half down, so an exact tie leaves the patient in train.
fn share(count: usize, fraction: f64) -> usize {
    let x = count as f64 * fraction;
    let r = (x - 0.5).ceil().max(0.0) as usize;
    r.min(count)
}

/// Splits patients into (train, val, test), preserving the class ratio in
/// each subset. Each class is shuffled independently with a seeded RNG,
/// then validation and test take their rounded shares; the remainder goes
/// to train.
pub fn patient_split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut subsets = [Vec::new(), Vec::new(), Vec::new()];

    for label in [Label::Negative, Label::Positive] {
        let mut members: Vec<_> = manifest
            .entries
            .iter()
            .filter(|p| p.label == label)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_val = share(n, spec.val_fraction);
        let n_test = share(n, spec.test_fraction).min(n - n_val);
        let n_train = n - n_val - n_test;

        let counts = [
            (n_train, spec.train_fraction, "train"),
            (n_val, spec.val_fraction, "validation"),
            (n_test, spec.test_fraction, "test"),
        ];
        for (count, fraction, name) in counts {
            if fraction > 0.0 && count == 0 {
                return Err(Error::InsufficientPatients(format!(
                    "{name} subset would receive no {label} patients ({n} available)"
                )));
            }
        }

        let (val, rest) = members.split_at(n_val);
        let (test, train) = rest.split_at(n_test);
        subsets[0].extend(train.iter().map(|p| (*p).clone()));
        subsets[1].extend(val.iter().map(|p| (*p).clone()));
        subsets[2].extend(test.iter().map(|p| (*p).clone()));
    }

    // present each subset in manifest order
    let order: std::collections::HashMap<&str, usize> = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, p)| (p.patient_id.as_str(), i))
        .collect();
    let [train, val, test] = subsets.map(|mut s| {
        s.sort_by_key(|p| order[p.patient_id.as_str()]);
        DatasetManifest {
            entries: s,
            source: manifest.source,
        }
    });
    Ok((train, val, test))
}

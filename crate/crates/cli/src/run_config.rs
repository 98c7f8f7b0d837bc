//! The merged run configuration persisted as `config.txt` in each run
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pcgnet_core::dsp::Preprocessor;
use pcgnet_core::model::{format_pairs, parse_pairs, NetworkConfig};
use pcgnet_core::signal_io::SplitSpec;
use pcgnet_core::train::TrainConfig;
use pcgnet_core::{Error, Result};

const SPLIT_KEYS: [&str; 4] = ["split_train", "split_val", "split_test", "split_seed"];
const PREPROCESS_KEYS: [&str; 2] = ["duration_s", "target_hz"];
const PATH_KEYS: [&str; 3] = ["manifest", "out_dir", "init_weights"];
const NETWORK_KEYS: [&str; 11] = [
    "depth",
    "residual_period",
    "bottleneck_channels",
    "kernel_sizes",
    "filters_per_branch",
    "use_bottleneck",
    "use_batchnorm",
    "input_channels",
    "num_classes",
    "head",
    "input_length",
];
const TRAIN_KEYS: [&str; 10] = [
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "decay_factor",
    "decay_every",
    "patience",
    "max_epochs",
    "batch_size",
    "seed",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub init_weights: Option<PathBuf>,
    pub split: SplitSpec,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub preprocess: Preprocessor,
    pub init_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
            init_weights: None,
            split: SplitSpec {
                train_fraction: 0.8,
                val_fraction: 0.1,
                test_fraction: 0.1,
                seed: 0,
            },
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            preprocess: Preprocessor::default(),
            init_seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Defaults overridden by `pairs`. Unknown keys are rejected. The
    /// network input length always follows the preprocessing window.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let known = |k: &str| {
            SPLIT_KEYS.contains(&k)
                || PREPROCESS_KEYS.contains(&k)
                || PATH_KEYS.contains(&k)
                || NETWORK_KEYS.contains(&k)
                || TRAIN_KEYS.contains(&k)
                || k == "init_seed"
        };
        if let Some(k) = pairs.keys().find(|k| !known(k)) {
            return Err(Error::ConfigInvalid(format!(
                "unknown configuration key {k:?}"
            )));
        }
        let mut cfg = Self::default();
        for (k, v) in pairs {
            match k.as_str() {
                "split_train" => cfg.split.train_fraction = parse(k, v)?,
                "split_val" => cfg.split.val_fraction = parse(k, v)?,
                "split_test" => cfg.split.test_fraction = parse(k, v)?,
                "split_seed" => cfg.split.seed = parse(k, v)?,
                "duration_s" => cfg.preprocess.duration_s = parse(k, v)?,
                "target_hz" => cfg.preprocess.target_hz = parse(k, v)?,
                "manifest" => cfg.manifest = PathBuf::from(v),
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                "init_weights" if !v.is_empty() => cfg.init_weights = Some(PathBuf::from(v)),
                "init_seed" => cfg.init_seed = parse(k, v)?,
                _ => {}
            }
        }
        if !(cfg.preprocess.duration_s > 0.0 && cfg.preprocess.duration_s.is_finite())
            || cfg.preprocess.target_hz == 0
        {
            return Err(Error::ConfigInvalid(
                "duration_s and target_hz must be positive".into(),
            ));
        }
        let mut network = pairs.clone();
        network.insert(
            "input_length".into(),
            cfg.preprocess.output_len().to_string(),
        );
        cfg.network.apply_pairs(&network)?;
        cfg.train.apply_pairs(pairs)?;
        cfg.split.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_pairs(&parse_pairs(&fs::read_to_string(path)?)?)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = vec![
            ("manifest", self.manifest.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            (
                "init_weights",
                self.init_weights
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("split_train", self.split.train_fraction.to_string()),
            ("split_val", self.split.val_fraction.to_string()),
            ("split_test", self.split.test_fraction.to_string()),
            ("split_seed", self.split.seed.to_string()),
            ("duration_s", self.preprocess.duration_s.to_string()),
            ("target_hz", self.preprocess.target_hz.to_string()),
            ("init_seed", self.init_seed.to_string()),
        ];
        pairs.extend(self.network.to_pairs());
        pairs.extend(self.train.to_pairs());
        pairs
    }

    pub fn to_text(&self) -> String {
        format_pairs(self.to_pairs())
    }
}

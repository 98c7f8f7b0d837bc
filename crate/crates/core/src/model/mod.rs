//! The inception-style 1D convolutional classifier.
//!
//! Each module runs three SAME convolutions of increasing kernel size on an
//! optional 1×1 bottleneck, plus a max-pool → 1×1 convolution branch, then
//! concatenates the four branches and applies batch norm and ReLU. Every
//! `residual_period` modules a 1×1-projected shortcut from the last join
//! is added back. Global average pooling feeds a dense head.

mod config;
mod network;
mod weights;

pub use config::{format_pairs, parse_pairs, HeadKind, InceptionModuleConfig, NetworkConfig};
pub use network::{positive_column, ForwardPass, Mode, Model, Param, ParamKind};
pub use weights::{load_weights, save_weights, ModelWeights, FORMAT_VERSION, MAGIC};

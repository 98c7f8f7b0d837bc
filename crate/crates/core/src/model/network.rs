use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{HeadKind, NetworkConfig};
use crate::autodiff::{BatchStats, BnMode, Tape, Tensor, Var, BN_MOMENTUM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; parameters take gradients.
    Train,
    /// Running statistics; no gradients.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Batch-norm running mean/variance: saved with the weights, updated by
    /// forward passes rather than the optimizer.
    RunningStat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy)]
struct BnRef {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone)]
struct InceptionBlock {
    bottleneck: Option<usize>,
    branches: [usize; 3],
    pool_conv: usize,
    bn: Option<BnRef>,
}

#[derive(Debug, Clone)]
struct Shortcut {
    after_block: usize,
    conv: usize,
    bn: Option<BnRef>,
}

#[derive(Debug, Clone, Copy)]
struct DenseHead {
    w: usize,
    b: usize,
}

/// The inception network: `depth` modules with periodic residual
/// shortcuts, global average pooling and a dense head.
#[derive(Debug, Clone)]
pub struct Model {
    config: NetworkConfig,
    params: Vec<Param>,
    blocks: Vec<InceptionBlock>,
    shortcuts: Vec<Shortcut>,
    head: DenseHead,
}

/// Handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    /// Class probabilities, `[B, K]` (or `[B, 1]` for a sigmoid head).
    pub probs: Var,
    /// `(parameter index, tape handle)` for each trainable parameter.
    pub param_vars: Vec<(usize, Var)>,
    bn_updates: Vec<(BnRef, BatchStats)>,
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

struct Builder {
    params: Vec<Param>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn add(&mut self, name: String, value: Tensor, kind: ParamKind) -> usize {
        self.params.push(Param { name, value, kind });
        self.params.len() - 1
    }

    fn conv(&mut self, name: String, c_out: usize, c_in: usize, kernel: usize) -> usize {
        let w = he_uniform(&mut self.rng, &[c_out, c_in, kernel], c_in * kernel);
        self.add(name, w, ParamKind::Trainable)
    }

    fn bn(&mut self, prefix: &str, channels: usize) -> BnRef {
        BnRef {
            gamma: self.add(
                format!("{prefix}.gamma"),
                Tensor::full([channels], 1.0),
                ParamKind::Trainable,
            ),
            beta: self.add(
                format!("{prefix}.beta"),
                Tensor::zeros([channels]),
                ParamKind::Trainable,
            ),
            mean: self.add(
                format!("{prefix}.running_mean"),
                Tensor::zeros([channels]),
                ParamKind::RunningStat,
            ),
            var: self.add(
                format!("{prefix}.running_var"),
                Tensor::full([channels], 1.0),
                ParamKind::RunningStat,
            ),
        }
    }
}

fn head_tensors(rng: &mut ChaCha8Rng, features: usize, outputs: usize) -> (Tensor, Tensor) {
    (
        he_uniform(rng, &[outputs, features], features),
        Tensor::zeros([outputs]),
    )
}

impl Model {
    /// Builds the network with He-uniform weights drawn from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let m = config.module.clone();
        let out = m.out_channels();
        let mut b = Builder {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut blocks = Vec::with_capacity(config.depth);
        let mut shortcuts = Vec::new();
        let mut c_in = config.input_channels;
        let mut c_res = config.input_channels;
        for i in 0..config.depth {
            let p = format!("block{i}");
            let bottleneck = (m.use_bottleneck && c_in > 1)
                .then(|| b.conv(format!("{p}.bottleneck.w"), m.bottleneck_channels, c_in, 1));
            let c_branch = if bottleneck.is_some() {
                m.bottleneck_channels
            } else {
                c_in
            };
            let branches = [0, 1, 2].map(|j| {
                b.conv(
                    format!("{p}.branch{j}.conv.w"),
                    m.filters_per_branch,
                    c_branch,
                    m.kernel_sizes[j],
                )
            });
            let pool_conv = b.conv(format!("{p}.pool.conv.w"), m.filters_per_branch, c_in, 1);
            let bn = config.use_batchnorm.then(|| b.bn(&format!("{p}.bn"), out));
            blocks.push(InceptionBlock {
                bottleneck,
                branches,
                pool_conv,
                bn,
            });
            c_in = out;
            if (i + 1) % config.residual_period == 0 {
                let s = format!("shortcut{}", shortcuts.len());
                let conv = b.conv(format!("{s}.conv.w"), out, c_res, 1);
                let bn = config.use_batchnorm.then(|| b.bn(&format!("{s}.bn"), out));
                shortcuts.push(Shortcut {
                    after_block: i,
                    conv,
                    bn,
                });
                c_res = out;
            }
        }
        let (hw, hb) = head_tensors(&mut b.rng, out, config.head_outputs());
        let head = DenseHead {
            w: b.add("head.w".into(), hw, ParamKind::Trainable),
            b: b.add("head.b".into(), hb, ParamKind::Trainable),
        };
        Ok(Self {
            config,
            params: b.params,
            blocks,
            shortcuts,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// 1-based indices of modules followed by a residual join.
    pub fn residual_joins(&self) -> Vec<usize> {
        self.shortcuts.iter().map(|s| s.after_block + 1).collect()
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }

    /// Swaps in a new dense head with `num_classes` outputs (softmax for
    /// two or more, sigmoid for one). Trunk tensors are untouched.
    ///
    /// The new head starts at zero, so the model initially predicts the
    /// uniform distribution and the first updates align the head with the
    /// existing features instead of pushing a random head's error back
    /// into the trunk.
    pub fn replace_head(&mut self, num_classes: usize) -> Result<()> {
        let mut config = self.config.clone();
        config.num_classes = num_classes;
        config.head = if num_classes == 1 {
            HeadKind::Sigmoid
        } else {
            HeadKind::Softmax
        };
        config.validate()?;
        let (features, outputs) = (config.module.out_channels(), config.head_outputs());
        self.params[self.head.w].value = Tensor::zeros([outputs, features]);
        self.params[self.head.b].value = Tensor::zeros([outputs]);
        self.config = config;
        Ok(())
    }

    fn bn_forward(
        &self,
        tape: &mut Tape,
        x: Var,
        bn: BnRef,
        mode: Mode,
        leaf: &mut dyn FnMut(&mut Tape, usize) -> Var,
        updates: &mut Vec<(BnRef, BatchStats)>,
    ) -> Result<Var> {
        let gamma = leaf(tape, bn.gamma);
        let beta = leaf(tape, bn.beta);
        let bn_mode = match mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval {
                mean: self.params[bn.mean].value.data(),
                var: self.params[bn.var].value.data(),
            },
        };
        let (y, stats) = tape.batchnorm1d(x, gamma, beta, bn_mode)?;
        if let Some(stats) = stats {
            updates.push((bn, stats));
        }
        Ok(y)
    }

    /// Records the network on `tape` for an input of shape
    /// `[B, input_channels, input_length]`.
    pub fn forward(&self, tape: &mut Tape, input: Var, mode: Mode) -> Result<ForwardPass> {
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 3
            || shape[1] != self.config.input_channels
            || shape[2] != self.config.input_length
        {
            return Err(Error::ShapeMismatch(format!(
                "network expects [B, {}, {}], got {shape:?}",
                self.config.input_channels, self.config.input_length
            )));
        }
        let train = mode == Mode::Train;
        let mut param_vars = Vec::new();
        let mut leaf = |tape: &mut Tape, idx: usize| {
            let v = tape.leaf(self.params[idx].value.clone(), train);
            if train {
                param_vars.push((idx, v));
            }
            v
        };
        let mut updates = Vec::new();

        let mut x = input;
        let mut residual = input;
        let mut shortcuts = self.shortcuts.iter().peekable();
        for (i, block) in self.blocks.iter().enumerate() {
            let branch_in = match block.bottleneck {
                Some(w) => {
                    let w = leaf(tape, w);
                    tape.conv1d(x, w, None)?
                }
                None => x,
            };
            let mut parts = Vec::with_capacity(4);
            for &w in &block.branches {
                let w = leaf(tape, w);
                parts.push(tape.conv1d(branch_in, w, None)?);
            }
            let pooled = tape.maxpool1d(x, 3)?;
            let w = leaf(tape, block.pool_conv);
            parts.push(tape.conv1d(pooled, w, None)?);
            let mut y = tape.concat_channels(&parts)?;
            if let Some(bn) = block.bn {
                y = self.bn_forward(tape, y, bn, mode, &mut leaf, &mut updates)?;
            }
            y = tape.relu(y);

            if let Some(s) = shortcuts.next_if(|s| s.after_block == i) {
                let w = leaf(tape, s.conv);
                let mut short = tape.conv1d(residual, w, None)?;
                if let Some(bn) = s.bn {
                    short = self.bn_forward(tape, short, bn, mode, &mut leaf, &mut updates)?;
                }
                let joined = tape.add(y, short)?;
                y = tape.relu(joined);
                residual = y;
            }
            x = y;
        }

        let pooled = tape.global_avg_pool(x)?;
        let hw = leaf(tape, self.head.w);
        let hb = leaf(tape, self.head.b);
        let logits = tape.dense(pooled, hw, Some(hb))?;
        let probs = match self.config.head {
            HeadKind::Softmax => tape.softmax(logits)?,
            HeadKind::Sigmoid => tape.sigmoid(logits),
        };
        Ok(ForwardPass {
            probs,
            param_vars,
            bn_updates: updates,
        })
    }

    /// Folds a training pass's batch statistics into the running averages.
    pub fn apply_running_updates(&mut self, pass: &ForwardPass) {
        for (bn, stats) in &pass.bn_updates {
            for (idx, batch) in [(bn.mean, &stats.mean), (bn.var, &stats.var)] {
                for (r, s) in self.params[idx].value.data_mut().iter_mut().zip(batch) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * s;
                }
            }
        }
    }

    /// Evaluation-mode class probabilities for a `[B, C, L]` batch.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone(), false);
        let pass = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(pass.probs).clone())
    }

    /// Positive-class probability for each single-channel input.
    pub fn predict_positive(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let len = self.config.input_length;
        let mut data = Vec::with_capacity(inputs.len() * len);
        for x in inputs {
            if x.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "input of {} samples, expected {len}",
                    x.len()
                )));
            }
            data.extend_from_slice(x);
        }
        let probs = self.predict(&Tensor::new([inputs.len(), 1, len], data)?)?;
        Ok(positive_column(&probs, self.config.head))
    }
}

/// Extracts the positive-class column (class index 1 for softmax).
pub fn positive_column(probs: &Tensor, head: HeadKind) -> Vec<f64> {
    let k = probs.shape()[1];
    match head {
        HeadKind::Sigmoid => probs.data().to_vec(),
        HeadKind::Softmax => probs.data().chunks_exact(k).map(|r| r[1]).collect(),
    }
}

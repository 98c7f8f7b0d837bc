use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InceptionModuleConfig {
    pub bottleneck_channels: usize,
    pub kernel_sizes: [usize; 3],
    pub filters_per_branch: usize,
    pub use_bottleneck: bool,
}

impl Default for InceptionModuleConfig {
    fn default() -> Self {
        Self {
            bottleneck_channels: 32,
            kernel_sizes: [10, 20, 40],
            filters_per_branch: 32,
            use_bottleneck: true,
        }
    }
}

impl InceptionModuleConfig {
    /// Channels produced by one module: three convolution branches plus the
    /// pooled branch.
    pub fn out_channels(&self) -> usize {
        4 * self.filters_per_branch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// One sigmoid output: the positive-class probability.
    Sigmoid,
    /// `num_classes` softmax outputs.
    Softmax,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Sigmoid => "sigmoid",
            HeadKind::Softmax => "softmax",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(HeadKind::Sigmoid),
            "softmax" => Ok(HeadKind::Softmax),
            other => Err(Error::ConfigInvalid(format!("unknown head {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub depth: usize,
    pub residual_period: usize,
    pub module: InceptionModuleConfig,
    pub use_batchnorm: bool,
    pub num_classes: usize,
    pub head: HeadKind,
    pub input_length: usize,
    pub input_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 10,
            residual_period: 3,
            module: InceptionModuleConfig::default(),
            use_batchnorm: true,
            num_classes: 2,
            head: HeadKind::Softmax,
            input_length: 12000,
            input_channels: 1,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.module;
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.depth == 0 || self.residual_period == 0 {
            return bad(format!(
                "depth {} and residual period {} must be positive",
                self.depth, self.residual_period
            ));
        }
        if m.filters_per_branch == 0 || m.bottleneck_channels == 0 || m.kernel_sizes.contains(&0) {
            return bad("module sizes must be positive".into());
        }
        if !m.kernel_sizes.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!(
                "kernel sizes {:?} must be strictly increasing",
                m.kernel_sizes
            ));
        }
        if self.input_length == 0 || self.input_channels == 0 {
            return bad("input shape must be positive".into());
        }
        match (self.head, self.num_classes) {
            (HeadKind::Sigmoid, 1) => {}
            (HeadKind::Softmax, k) if k >= 2 => {}
            (head, k) => return bad(format!("{} head cannot have {k} classes", head.as_str())),
        }
        Ok(())
    }

    /// 1-based module indices after which a residual shortcut joins.
    pub fn residual_joins(&self) -> Vec<usize> {
        (1..=self.depth)
            .filter(|i| i % self.residual_period == 0)
            .collect()
    }

    /// Number of trainable scalars, in closed form.
    ///
    /// Module `i` with `c` input channels and `F` filters per branch has
    /// an optional `c·B` bottleneck (when enabled and `c > 1`), three
    /// branches of `F·c'·k_j` where `c'` is `B` or `c`, a pooled branch of
    /// `c·F`, and `2·4F` batch-norm scale/shift. Each shortcut adds
    /// `c_res·4F + 2·4F`; the head adds `4F·K + K`.
    pub fn parameter_count(&self) -> usize {
        let m = &self.module;
        let out = m.out_channels();
        let bn = if self.use_batchnorm { 2 * out } else { 0 };
        let k_sum: usize = m.kernel_sizes.iter().sum();
        let mut total = 0;
        let mut c = self.input_channels;
        let mut c_res = self.input_channels;
        for i in 1..=self.depth {
            let bottleneck = m.use_bottleneck && c > 1;
            let c_branch = if bottleneck { m.bottleneck_channels } else { c };
            if bottleneck {
                total += c * m.bottleneck_channels;
            }
            total += m.filters_per_branch * c_branch * k_sum + c * m.filters_per_branch + bn;
            c = out;
            if i % self.residual_period == 0 {
                total += c_res * out + bn;
                c_res = out;
            }
        }
        total + out * self.head_outputs() + self.head_outputs()
    }

    pub fn head_outputs(&self) -> usize {
        match self.head {
            HeadKind::Sigmoid => 1,
            HeadKind::Softmax => self.num_classes,
        }
    }

    fn trunk_pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.module;
        vec![
            ("depth", self.depth.to_string()),
            ("residual_period", self.residual_period.to_string()),
            ("bottleneck_channels", m.bottleneck_channels.to_string()),
            (
                "kernel_sizes",
                m.kernel_sizes.map(|k| k.to_string()).join(","),
            ),
            ("filters_per_branch", m.filters_per_branch.to_string()),
            ("use_bottleneck", m.use_bottleneck.to_string()),
            ("use_batchnorm", self.use_batchnorm.to_string()),
            ("input_channels", self.input_channels.to_string()),
        ]
    }

    /// Hash of the fields that fix trunk tensor shapes. The head and the
    /// input length are excluded so a trunk can move between tasks.
    pub fn fingerprint(&self) -> u64 {
        let mut canon = String::new();
        for (k, v) in self.trunk_pairs() {
            let _ = writeln!(canon, "{k}={v}");
        }
        fnv1a(canon.as_bytes())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = self.trunk_pairs();
        pairs.push(("num_classes", self.num_classes.to_string()));
        pairs.push(("head", self.head.as_str().to_string()));
        pairs.push(("input_length", self.input_length.to_string()));
        pairs
    }

    /// Overrides fields from `key = value` pairs; unknown keys are left
    /// for the caller.
    pub fn apply_pairs(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {v:?}")))
        }
        for (key, v) in pairs {
            let v = v.as_str();
            match key.as_str() {
                "depth" => self.depth = parse(key, v)?,
                "residual_period" => self.residual_period = parse(key, v)?,
                "bottleneck_channels" => self.module.bottleneck_channels = parse(key, v)?,
                "filters_per_branch" => self.module.filters_per_branch = parse(key, v)?,
                "use_bottleneck" => self.module.use_bottleneck = parse(key, v)?,
                "use_batchnorm" => self.use_batchnorm = parse(key, v)?,
                "input_channels" => self.input_channels = parse(key, v)?,
                "num_classes" => self.num_classes = parse(key, v)?,
                "head" => self.head = v.parse()?,
                "input_length" => self.input_length = parse(key, v)?,
                "kernel_sizes" => {
                    let ks: Vec<usize> = v
                        .split(',')
                        .map(|k| parse(key, k.trim()))
                        .collect::<Result<_>>()?;
                    self.module.kernel_sizes = ks.try_into().map_err(|_| {
                        Error::ConfigInvalid("kernel_sizes needs three values".into())
                    })?;
                }
                _ => {}
            }
        }
        self.validate()
    }
}

/// Renders `key = value` lines.
pub fn format_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

/// Parses `key = value` lines, ignoring blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected key = value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

//! Preprocessing chain: anti-aliased decimation, z-score normalization and
//! fixed-length framing, in that order.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal_io::Recording;

/// Default output rate of the decimator.
pub const TARGET_RATE_HZ: u32 = 800;
/// Default taps of the anti-aliasing filter.
pub const DEFAULT_TAPS: usize = 101;
/// Anti-aliasing cutoff as a fraction of the output rate.
pub const CUTOFF_FRACTION: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hamming,
}

impl Window {
    fn coefficient(self, n: usize, len: usize) -> f64 {
        match self {
            Window::Hamming => {
                if len == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub num_taps: usize,
    pub window: Window,
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc low-pass FIR, normalized to unity DC gain.
pub fn design_lowpass(spec: &FilterSpec, fs_hz: f64) -> Result<Vec<f64>> {
    if !(spec.cutoff_hz > 0.0 && spec.cutoff_hz < fs_hz / 2.0) {
        return Err(Error::InvalidCutoff {
            cutoff_hz: spec.cutoff_hz,
            fs_hz,
        });
    }
    if spec.num_taps == 0 || spec.num_taps % 2 == 0 {
        return Err(Error::ConfigInvalid(format!(
            "filter needs an odd tap count, got {}",
            spec.num_taps
        )));
    }
    let fc = spec.cutoff_hz / fs_hz;
    let mid = (spec.num_taps / 2) as f64;
    let mut taps: Vec<f64> = (0..spec.num_taps)
        .map(|n| {
            2.0 * fc * sinc(2.0 * fc * (n as f64 - mid)) * spec.window.coefficient(n, spec.num_taps)
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Zero-phase FIR filtering evaluated only at every `step`-th output
/// sample. The filter is centred, so its group delay is removed.
fn filter_and_pick(x: &[f64], taps: &[f64], step: usize) -> Vec<f64> {
    let half = taps.len() / 2;
    let n = x.len();
    (0..n)
        .step_by(step)
        .map(|i| {
            // y[i] = sum_k taps[k] * x[i + half - k]
            let lo = (i + half + 1).saturating_sub(n);
            let hi = (i + half).min(taps.len() - 1);
            (lo..=hi).map(|k| taps[k] * x[i + half - k]).sum()
        })
        .collect()
}

/// Decimates to `target_hz` by an integer factor after low-pass filtering
/// at `0.45 * target_hz`. The output is aligned with the input start and
/// has `ceil(len / factor)` samples.
pub fn decimate(rec: &Recording, target_hz: u32) -> Result<Recording> {
    decimate_with(rec, target_hz, DEFAULT_TAPS)
}

pub fn decimate_with(rec: &Recording, target_hz: u32, num_taps: usize) -> Result<Recording> {
    let from = rec.sample_rate_hz;
    if target_hz == 0 || from % target_hz != 0 {
        return Err(Error::NonIntegerFactor {
            from_hz: from,
            to_hz: target_hz,
        });
    }
    if rec.samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let factor = (from / target_hz) as usize;
    let samples = if factor == 1 {
        rec.samples.clone()
    } else {
        let spec = FilterSpec {
            cutoff_hz: CUTOFF_FRACTION * f64::from(target_hz),
            num_taps,
            window: Window::Hamming,
        };
        let taps = design_lowpass(&spec, f64::from(from))?;
        filter_and_pick(&rec.samples, &taps, factor)
    };
    Ok(Recording {
        sample_rate_hz: target_hz,
        samples,
        ..rec.clone()
    })
}

/// Zero mean, unit population standard deviation. A constant signal maps
/// to all zeros.
pub fn zscore(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // rounding noise on a constant signal is not variance
    if std == 0.0 || std <= 1e-12 * mean.abs() {
        return Ok(vec![0.0; samples.len()]);
    }
    Ok(samples.iter().map(|x| (x - mean) / std).collect())
}

/// Truncates (keeping the start) or zero-pads at the end to `target_len`.
pub fn fix_length(samples: &[f64], target_len: usize) -> Vec<f64> {
    let mut out = samples[..samples.len().min(target_len)].to_vec();
    out.resize(target_len, 0.0);
    out
}

/// The full chain, producing a network input of fixed length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocessor {
    pub target_hz: u32,
    pub duration_s: f64,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self {
            target_hz: TARGET_RATE_HZ,
            duration_s: 15.0,
        }
    }
}

impl Preprocessor {
    pub fn new(target_hz: u32, duration_s: f64) -> Self {
        Self {
            target_hz,
            duration_s,
        }
    }

    pub fn output_len(&self) -> usize {
        (self.duration_s * f64::from(self.target_hz)).round() as usize
    }

    pub fn apply(&self, rec: &Recording) -> Result<Vec<f64>> {
        let down = decimate(rec, self.target_hz)?;
        let normalized = zscore(&down.samples)?;
        Ok(fix_length(&normalized, self.output_len()))
    }
}

//! Numeric kernels behind the tape operations. Layouts are row-major:
//! activations `[batch, channels, length]`, conv weights `[out, in, kernel]`.
//!
//! Parallel loops split work so that every output element is written by
//! exactly one task, which keeps results independent of the thread count.

use rayon::prelude::*;

use super::pool;

/// Left padding for SAME convolution/pooling; odd remainders go right.
#[inline]
pub(crate) fn same_pad_left(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// Output positions `t` for which `t + shift` lies inside `0..len`.
#[inline]
fn valid_range(shift: isize, len: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
}

/// Time-tile width for the weight gradient, sized so the gradient and
/// input tiles stay in L1.
const TILE: usize = 128;

/// Output positions computed together in registers.
const LANES: usize = 8;

/// Cross-correlation core for one batch item:
/// `out[o][t] += Σ_c Σ_k wt(o, c, k) · src[c][t + k − pad]`, zero padded.
///
/// Interior positions, where every tap is in range, run in blocks of
/// `LANES` accumulators; the edges fall back to a bounds-checked loop.
fn correlate_item<W: Fn(usize, usize, usize) -> f64>(
    src: &[f64],
    out: &mut [f64],
    (c_src, len, kernel, pad): (usize, usize, usize, usize),
    wt: W,
) {
    let interior_lo = pad.min(len);
    let interior_hi = (len + pad + 1).saturating_sub(kernel).max(interior_lo);
    let blocks_end = interior_lo + (interior_hi - interior_lo) / LANES * LANES;
    let mut w_o = vec![0.0; c_src * kernel];
    for (o, out_row) in out.chunks_exact_mut(len).enumerate() {
        for c in 0..c_src {
            for k in 0..kernel {
                w_o[c * kernel + k] = wt(o, c, k);
            }
        }
        for t in (interior_lo..blocks_end).step_by(LANES) {
            let mut acc: [f64; LANES] = out_row[t..t + LANES].try_into().expect("lane block");
            for c in 0..c_src {
                let row = &src[c * len + t - pad..c * len + t - pad + kernel - 1 + LANES];
                for (k, &wv) in w_o[c * kernel..(c + 1) * kernel].iter().enumerate() {
                    let xs: &[f64; LANES] = row[k..k + LANES].try_into().expect("lane block");
                    for j in 0..LANES {
                        acc[j] += wv * xs[j];
                    }
                }
            }
            out_row[t..t + LANES].copy_from_slice(&acc);
        }
        for t in (0..interior_lo).chain(blocks_end..len) {
            let mut acc = out_row[t];
            for c in 0..c_src {
                let row = &src[c * len..(c + 1) * len];
                for k in 0..kernel {
                    let s = t as isize + k as isize - pad as isize;
                    if s >= 0 && (s as usize) < len {
                        acc += w_o[c * kernel + k] * row[s as usize];
                    }
                }
            }
            out_row[t] = acc;
        }
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let ConvDims {
        c_in,
        c_out,
        len,
        kernel,
        ..
    } = *d;
    let pad = same_pad_left(kernel);
    let mut out = pool::zeroed(d.batch * c_out * len);
    out.par_chunks_mut(c_out * len)
        .enumerate()
        .for_each(|(b, out_b)| {
            if let Some(bias) = bias {
                for (row, &bv) in out_b.chunks_exact_mut(len).zip(bias) {
                    row.fill(bv);
                }
            }
            let x_b = &x[b * c_in * len..(b + 1) * c_in * len];
            correlate_item(x_b, out_b, (c_in, len, kernel, pad), |o, c, k| {
                w[(o * c_in + c) * kernel + k]
            });
        });
    out
}

/// Input gradient: a correlation of `g` with the flipped, transposed
/// kernel and mirrored padding.
pub(crate) fn conv1d_backward_input(g: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let ConvDims {
        c_in,
        c_out,
        len,
        kernel,
        ..
    } = *d;
    let pad = kernel - 1 - same_pad_left(kernel);
    let mut dx = pool::zeroed(d.batch * c_in * len);
    dx.par_chunks_mut(c_in * len)
        .enumerate()
        .for_each(|(b, dx_b)| {
            let g_b = &g[b * c_out * len..(b + 1) * c_out * len];
            correlate_item(g_b, dx_b, (c_out, len, kernel, pad), |c, o, k| {
                w[(o * c_in + c) * kernel + (kernel - 1 - k)]
            });
        });
    dx
}

pub(crate) fn conv1d_backward_weight(g: &[f64], x: &[f64], d: &ConvDims) -> Vec<f64> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        len,
        kernel,
    } = *d;
    let pad = same_pad_left(kernel) as isize;
    let mut dw = vec![0.0; c_out * c_in * kernel];
    dw.par_chunks_mut(c_in * kernel)
        .enumerate()
        .for_each(|(o, dw_o)| {
            for b in 0..batch {
                let g_row = &g[(b * c_out + o) * len..(b * c_out + o + 1) * len];
                for t0 in (0..len).step_by(TILE) {
                    let t_end = (t0 + TILE).min(len);
                    for c in 0..c_in {
                        let x_row = &x[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                        for k in 0..kernel {
                            let shift = k as isize - pad;
                            let (lo, hi) = valid_range(shift, len);
                            let (a, e) = (lo.max(t0), hi.min(t_end));
                            if a >= e {
                                continue;
                            }
                            let s0 = (a as isize + shift) as usize;
                            dw_o[c * kernel + k] += dot(&g_row[a..e], &x_row[s0..s0 + (e - a)]);
                        }
                    }
                }
            }
        });
    dw
}

pub(crate) fn conv1d_backward_bias(g: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut db = vec![0.0; d.c_out];
    for (i, row) in g.chunks_exact(d.len).enumerate() {
        db[i % d.c_out] += row.iter().sum::<f64>();
    }
    db
}

/// SAME max pooling with stride 1 and −∞ padding. Returns the pooled
/// values and, for each output, the index of the winning input within its
/// row (first occurrence on ties).
pub(crate) fn maxpool1d_forward(x: &[f64], len: usize, window: usize) -> (Vec<f64>, Vec<u32>) {
    let pad = same_pad_left(window);
    let mut out = pool::zeroed(x.len());
    let mut arg = vec![0u32; x.len()];
    out.par_chunks_mut(len)
        .zip(arg.par_chunks_mut(len))
        .zip(x.par_chunks(len))
        .for_each(|((out_row, arg_row), x_row)| {
            for t in 0..len {
                let lo = t.saturating_sub(pad);
                let hi = (t + window - pad).min(len);
                let mut best = lo;
                for s in lo + 1..hi {
                    if x_row[s] > x_row[best] {
                        best = s;
                    }
                }
                out_row[t] = x_row[best];
                arg_row[t] = best as u32;
            }
        });
    (out, arg)
}

pub(crate) fn maxpool1d_backward(g: &[f64], arg: &[u32], len: usize, dx: &mut [f64]) {
    for ((g_row, a_row), dx_row) in g
        .chunks_exact(len)
        .zip(arg.chunks_exact(len))
        .zip(dx.chunks_exact_mut(len))
    {
        for (gv, &a) in g_row.iter().zip(a_row) {
            dx_row[a as usize] += gv;
        }
    }
}

/// Per-channel statistics over batch and length: (mean, biased variance).
pub(crate) fn channel_moments(
    x: &[f64],
    batch: usize,
    channels: usize,
    len: usize,
) -> (Vec<f64>, Vec<f64>) {
    let count = (batch * len) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let rows = (0..batch).map(|b| &x[(b * channels + c) * len..(b * channels + c + 1) * len]);
        let m = rows.clone().map(|r| r.iter().sum::<f64>()).sum::<f64>() / count;
        let v = rows
            .map(|r| r.iter().map(|v| (v - m) * (v - m)).sum::<f64>())
            .sum::<f64>()
            / count;
        mean[c] = m;
        var[c] = v;
    }
    (mean, var)
}

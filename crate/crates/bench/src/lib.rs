//! Deterministic inputs shared by the benchmarks.

use pcgnet_core::autodiff::Tensor;
use pcgnet_core::signal_io::Label;

/// A bounded pseudo-random sequence from a linear congruential generator.
pub fn sequence(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

pub fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), sequence(n, seed)).expect("shape matches data")
}

/// Scores and alternating labels for curve benchmarks.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<Label>) {
    let scores = sequence(n, seed)
        .into_iter()
        .map(|v| (v + 1.0) / 2.0)
        .collect();
    let labels = (0..n)
        .map(|i| {
            if i % 3 == 0 {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect();
    (scores, labels)
}

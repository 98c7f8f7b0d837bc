use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::signal_io::Label;

/// Cumulative `(fp, tp)` counts after each distinct threshold, with the
/// class totals.
struct Sweep {
    points: Vec<(u64, u64)>,
    p: u64,
    n: u64,
}

/// Sweeps from the highest score down, starting at `(0, 0)`.
fn sweep(scores: &[f64], labels: &[Label]) -> Result<Sweep> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let p = labels.iter().filter(|l| l.is_positive()).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::ShapeMismatch("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut points = vec![(0, 0)];
    let (mut fp, mut tp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i].is_positive() {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).map_or(true, |&j| scores[j] != scores[i]);
        if last_of_group {
            points.push((fp, tp));
        }
    }
    Ok(Sweep { points, p, n })
}

/// Area under the ROC curve by trapezoidal integration over every
/// distinct threshold. The sum is carried in integers, so the result is
/// exactly `(2·concordant + ties) / (2·P·N)` rounded once.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let Sweep { points, p, n } = sweep(scores, labels)?;
    let twice_area: u128 = points
        .windows(2)
        .map(|w| u128::from(w[1].0 - w[0].0) * u128::from(w[0].1 + w[1].1))
        .sum();
    Ok(twice_area as f64 / (2 * u128::from(p) * u128::from(n)) as f64)
}

/// ROC points `(false positive rate, true positive rate)` from `(0, 0)`
/// to `(1, 1)`.
pub fn roc_points(scores: &[f64], labels: &[Label]) -> Result<Vec<(f64, f64)>> {
    let Sweep { points, p, n } = sweep(scores, labels)?;
    Ok(points
        .into_iter()
        .map(|(fp, tp)| (fp as f64 / n as f64, tp as f64 / p as f64))
        .collect())
}

/// PR points `(recall, precision)` at the same thresholds as the ROC.
pub fn pr_points(scores: &[f64], labels: &[Label]) -> Result<Vec<(f64, f64)>> {
    let Sweep { points, p, .. } = sweep(scores, labels)?;
    Ok(points
        .into_iter()
        .skip(1)
        .map(|(fp, tp)| (tp as f64 / p as f64, tp as f64 / (tp + fp) as f64))
        .collect())
}

/// Trapezoidal area under a polyline.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

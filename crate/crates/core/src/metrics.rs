//! Objective segmentation metrics and interval estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BinaryMask, Boundary};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("mask dimensions differ: {pred:?} vs {gt:?}")]
    Dimensions { pred: (usize, usize), gt: (usize, usize) },
    #[error("boundary displacement undefined for an empty boundary")]
    EmptyBoundary,
    #[error("confidence interval needs at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("accuracy undefined for an empty image")]
    EmptyImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when nothing was predicted.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `None` when the ground truth is empty.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts, MetricError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(MetricError::Dimensions {
            pred: (pred.width(), pred.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    pub value: f64,
    /// Both masks were empty; `value` is 1.0 by convention.
    pub both_empty: bool,
}

/// `2TP / (2TP + FP + FN)`.
pub fn dice(c: &ConfusionCounts) -> DiceScore {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return DiceScore { value: 1.0, both_empty: true };
    }
    DiceScore { value: (2 * c.tp) as f64 / denom as f64, both_empty: false }
}

/// `(TP + TN) / total`.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricError> {
    let total = c.total();
    if total == 0 {
        return Err(MetricError::EmptyImage);
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdeScore {
    /// Mean of the two directional values.
    pub symmetric: f64,
    pub a_to_b: f64,
    pub b_to_a: f64,
}

/// Boundary displacement error: mean nearest-pixel Euclidean distance,
/// averaged over both directions.
pub fn bde(a: &Boundary, b: &Boundary) -> Result<BdeScore, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyBoundary);
    }
    let a_to_b = directed_mean_distance(a.pixels(), b.pixels());
    let b_to_a = directed_mean_distance(b.pixels(), a.pixels());
    Ok(BdeScore { symmetric: (a_to_b + b_to_a) / 2.0, a_to_b, b_to_a })
}

/// `from` must be non-empty; `to` must be sorted by `(y, x)` as
/// [`Boundary`] guarantees.
fn directed_mean_distance(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    // Rows of `to`, for pruning by vertical distance.
    let mut rows: Vec<(usize, usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=to.len() {
        if i == to.len() || to[i].1 != to[start].1 {
            rows.push((to[start].1, start, i));
            start = i;
        }
    }
    let mut total = 0.0;
    for &(px, py) in from {
        let first = rows.partition_point(|r| r.0 < py);
        let mut best = u64::MAX;
        let scan = |r: &(usize, usize, usize), best: &mut u64| {
            let dy = r.0.abs_diff(py) as u64;
            for &(qx, _) in &to[r.1..r.2] {
                let dx = qx.abs_diff(px) as u64;
                *best = (*best).min(dx * dx + dy * dy);
            }
        };
        for r in &rows[first..] {
            let dy = (r.0 - py) as u64;
            if dy * dy > best {
                break;
            }
            scan(r, &mut best);
        }
        for r in rows[..first].iter().rev() {
            let dy = (py - r.0) as u64;
            if dy * dy > best {
                break;
            }
            scan(r, &mut best);
        }
        total += (best as f64).sqrt();
    }
    total / from.len() as f64
}

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanInterval {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

/// Mean with a 95% normal-approximation half-width `1.96 s / sqrt(n)`,
/// `s` the sample standard deviation (n - 1 denominator).
pub fn mean_confidence_interval(values: &[f64]) -> Result<MeanInterval, MetricError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricError::TooFewValues(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(MeanInterval { mean, half_width: Z_95 * var.sqrt() / (n as f64).sqrt(), n })
}

//! Depth error metrics and the BerHu loss.
//!
//! Pixels whose ground truth is not a positive finite number are masked
//! out of every metric.

use alloc::vec::Vec;

use libm::{log10, sqrt};

use crate::error::{Error, Result};

/// Thresholds `1.05^i` and `1.25^i`, `i = 1..3`.
pub const DEFAULT_THRESHOLDS: [f64; 6] = [1.05, 1.1025, 1.157625, 1.25, 1.5625, 1.953125];

fn valid_pairs<'a>(pred: &'a [f64], gt: &'a [f64]) -> Result<Vec<(f64, f64)>> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let pairs: Vec<(f64, f64)> = pred
        .iter()
        .zip(gt)
        .filter(|(_, &y)| y.is_finite() && y > 0.0)
        .map(|(&p, &y)| (p, y))
        .collect();
    if pairs.is_empty() {
        return Err(Error::invalid("no valid ground-truth pixels"));
    }
    Ok(pairs)
}

fn positive_pairs<'a>(pred: &'a [f64], gt: &'a [f64]) -> Result<Vec<(f64, f64)>> {
    let pairs = valid_pairs(pred, gt)?;
    if pairs.iter().any(|(p, _)| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::invalid("predicted depths must be positive where ground truth is valid"));
    }
    Ok(pairs)
}

/// Mean of `|pred - gt| / gt`.
pub fn abs_rel(pred: &[f64], gt: &[f64]) -> Result<f64> {
    let pairs = valid_pairs(pred, gt)?;
    Ok(pairs.iter().map(|(p, y)| (p - y).abs() / y).sum::<f64>() / pairs.len() as f64)
}

/// Root of the mean squared difference.
pub fn rmse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    let pairs = valid_pairs(pred, gt)?;
    let mse = pairs.iter().map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pairs.len() as f64;
    Ok(sqrt(mse))
}

/// Mean of `|log10 pred - log10 gt|`.
pub fn log10_err(pred: &[f64], gt: &[f64]) -> Result<f64> {
    let pairs = positive_pairs(pred, gt)?;
    Ok(pairs.iter().map(|(p, y)| (log10(*p) - log10(*y)).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Fraction of pixels with `max(pred/gt, gt/pred) < thr` (strict).
pub fn threshold_accuracy(pred: &[f64], gt: &[f64], thr: f64) -> Result<f64> {
    if !(thr > 1.0) {
        return Err(Error::invalid("threshold must exceed 1"));
    }
    let pairs = positive_pairs(pred, gt)?;
    let hits = pairs
        .iter()
        .filter(|(p, y)| (p / y).max(y / p) < thr)
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Reverse Huber loss: `|x|` up to `c`, `(x^2 + c^2) / 2c` beyond.
pub fn berhu(x: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    let a = x.abs();
    if a <= c {
        a
    } else {
        (x * x + c * c) / (2.0 * c)
    }
}

/// Default BerHu threshold.
pub const BERHU_C: f64 = 0.1;

/// All depth metrics of one prediction.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub rmse: f64,
    pub log10: f64,
    /// `(threshold, accuracy)` pairs.
    pub threshold_accuracy: Vec<(f64, f64)>,
}

pub fn depth_metrics(pred: &[f64], gt: &[f64], thresholds: &[f64]) -> Result<DepthMetrics> {
    Ok(DepthMetrics {
        abs_rel: abs_rel(pred, gt)?,
        rmse: rmse(pred, gt)?,
        log10: log10_err(pred, gt)?,
        threshold_accuracy: thresholds
            .iter()
            .map(|&t| threshold_accuracy(pred, gt, t).map(|a| (t, a)))
            .collect::<Result<_>>()?,
    })
}

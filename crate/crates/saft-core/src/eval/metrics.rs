//! Classification and regression scoring metrics.

use crate::error::{Result, SaftError};

/// F1 / precision / recall. Binary tasks (labels within {0,1}) score the
/// positive class; anything else is macro-averaged. Empty denominators
/// score 0.
pub fn f1_precision_recall(y_true: &[f64], y_pred: &[f64]) -> Result<(f64, f64, f64)> {
    if y_true.len() != y_pred.len() {
        return Err(SaftError::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut labels: Vec<i64> = y_true
        .iter()
        .chain(y_pred.iter())
        .map(|y| y.round() as i64)
        .collect();
    labels.sort_unstable();
    labels.dedup();

    let binary = labels.iter().all(|&l| l == 0 || l == 1);
    let per_class = |positive: i64| -> (f64, f64, f64) {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (t, p) in y_true.iter().zip(y_pred) {
            let t = t.round() as i64 == positive;
            let p = p.round() as i64 == positive;
            match (t, p) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        (f1, precision, recall)
    };

    if binary {
        Ok(per_class(1))
    } else {
        let mut acc = (0.0, 0.0, 0.0);
        for &l in &labels {
            let (f1, p, r) = per_class(l);
            acc.0 += f1;
            acc.1 += p;
            acc.2 += r;
        }
        let k = labels.len() as f64;
        Ok((acc.0 / k, acc.1 / k, acc.2 / k))
    }
}

/// (1-RAE, 1-MAE, 1-MSE). MAE and MSE are computed on targets standardized
/// by `y_true`'s own moments so the scores stay scale-bounded.
pub fn regression_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<(f64, f64, f64)> {
    if y_true.len() != y_pred.len() {
        return Err(SaftError::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(SaftError::InvalidArgument(
            "regression metrics need at least 2 points".into(),
        ));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let abs_dev: f64 = y_true.iter().map(|y| (y - mean).abs()).sum();
    if abs_dev == 0.0 {
        return Err(SaftError::InvalidArgument(
            "1-RAE undefined: constant y_true".into(),
        ));
    }
    let abs_err: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p).abs())
        .sum();
    let one_minus_rae = 1.0 - abs_err / abs_dev;

    let std = (y_true.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).sqrt();
    let z = |x: f64| (x - mean) / std;
    let mae = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (z(*y) - z(*p)).abs())
        .sum::<f64>()
        / n;
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (z(*y) - z(*p)).powi(2))
        .sum::<f64>()
        / n;
    Ok((one_minus_rae, 1.0 - mae, 1.0 - mse))
}

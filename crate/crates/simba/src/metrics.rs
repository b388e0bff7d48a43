//! Evaluation metrics and the JSON report.

use crate::error::{Result, SimbaError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if predictions.is_empty() {
        return f64::NAN;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / predictions.len() as f64
}

/// Unweighted mean of per-class F1 scores. A class absent from both the
/// predictions and the labels contributes an F1 of 0 with a warning.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    let mut total = 0.0;
    for c in 0..num_classes {
        let tp = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p == c && l == c)
            .count() as f64;
        let fp = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p == c && l != c)
            .count() as f64;
        let fn_ = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p != c && l == c)
            .count() as f64;
        if tp + fp + fn_ == 0.0 {
            log::warn!("class {c} absent from predictions and labels; F1 counted as 0");
            continue;
        }
        if tp > 0.0 {
            let precision = tp / (tp + fp);
            let recall = tp / (tp + fn_);
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / num_classes as f64
}

/// Central moment discrepancy between two vector samples (rows of X and Y):
/// the mean difference plus higher central moments, each normalized by the
/// empirical value range of the joint sample.
pub fn cmd_metric(x: &Tensor, y: &Tensor, moments: usize) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(SimbaError::Argument("CMD over an empty sample".into()));
    }
    if x.cols() != y.cols() {
        return Err(SimbaError::Dimension(format!(
            "CMD dimensions {} vs {}",
            x.cols(),
            y.cols()
        )));
    }
    let lo = x
        .data()
        .iter()
        .chain(y.data())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = x
        .data()
        .iter()
        .chain(y.data())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range == 0.0 {
        log::warn!("CMD over samples with zero value range; returning 0");
        return Ok(0.0);
    }

    let d = x.cols();
    let mean = |t: &Tensor| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for i in 0..t.rows() {
            for (mj, v) in m.iter_mut().zip(t.row(i)) {
                *mj += v;
            }
        }
        m.iter().map(|v| v / t.rows() as f64).collect()
    };
    let central_moment = |t: &Tensor, m: &[f64], k: i32| -> Vec<f64> {
        let mut c = vec![0.0; d];
        for i in 0..t.rows() {
            for j in 0..d {
                c[j] += (t.at(i, j) - m[j]).powi(k);
            }
        }
        c.iter().map(|v| v / t.rows() as f64).collect()
    };
    let norm = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    let mx = mean(x);
    let my = mean(y);
    let mut total = norm(&mx, &my) / range;
    for k in 2..=moments {
        let cx = central_moment(x, &mx, k as i32);
        let cy = central_moment(y, &my, k as i32);
        total += norm(&cx, &cy) / range.powi(k as i32);
    }
    Ok(total)
}

pub const METRICS_SCHEMA_VERSION: &str = "simba-metrics-v1";

/// The metrics report emitted by training and evaluation, serialized as
/// JSON against the schema shipped in `schemas/metrics-v1.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// None when the evaluated split contains no head graphs.
    pub head_accuracy: Option<f64>,
    /// None when the evaluated split contains no tail graphs.
    pub tail_accuracy: Option<f64>,
    pub sir: f64,
    pub loss_curve: Vec<f64>,
    pub val_accuracy_curve: Vec<f64>,
    pub best_epoch: usize,
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub config: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = vec![0, 1, 0, 1];
        assert_eq!(accuracy(&labels, &labels), 1.0);
        assert_eq!(macro_f1(&labels, &labels, 2), 1.0);
    }

    #[test]
    fn macro_f1_half_right() {
        // preds [0,0,1,1] vs labels [0,1,0,1]: both classes get F1 = 0.5.
        let f1 = macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2);
        assert!((f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_all_one_class() {
        // All-0 predictions on a balanced split: class 0 F1 = 2/3, class 1
        // F1 = 0, macro = 1/3; accuracy 0.5.
        let preds = vec![0, 0, 0, 0];
        let labels = vec![0, 0, 1, 1];
        assert!((accuracy(&preds, &labels) - 0.5).abs() < 1e-12);
        assert!((macro_f1(&preds, &labels, 2) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cmd_identical_samples_zero() {
        let x = Tensor::from_rows(&[vec![0.2, 0.4], vec![0.3, 0.1], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(cmd_metric(&x, &x, 5).unwrap(), 0.0);
    }

    #[test]
    fn cmd_constant_scalars() {
        let x = Tensor::filled(10, 1, 0.0);
        let y = Tensor::filled(10, 1, 1.0);
        // range 1, mean gap 1, all central moments zero
        assert!((cmd_metric(&x, &y, 5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cmd_symmetric() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let y = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let a = cmd_metric(&x, &y, 5).unwrap();
        let b = cmd_metric(&y, &x, 5).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(a > 0.0);
    }

    #[test]
    fn cmd_zero_range() {
        let x = Tensor::filled(3, 2, 0.5);
        let y = Tensor::filled(4, 2, 0.5);
        assert_eq!(cmd_metric(&x, &y, 5).unwrap(), 0.0);
    }
}

//! Accuracy and per-class mean angle between features and class weights.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{dot, norm, Matrix};

/// Rows per forward pass when scanning a dataset.
const EVAL_CHUNK: usize = 1024;

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(EVAL_CHUNK).map(move |s| (s..(s + EVAL_CHUNK).min(n)).collect())
}

/// Fraction of instances whose prediction (original, unbiased weights) matches the label.
pub fn accuracy(params: &ModelParams, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut correct = 0usize;
    for idx in chunks(d.len()) {
        let (xs, labels) = d.gather(&idx);
        let pred = params.predict_batch(&xs)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / d.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    /// Radians in [0, π]; `None` for classes without a usable instance.
    pub per_class: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Instance-weighted mean over all classes.
    pub overall_mean: Option<f64>,
    /// Instances dropped because their feature had zero norm.
    pub skipped: usize,
    pub split: Split,
}

impl AngleReport {
    pub fn per_class_degrees(&self) -> Vec<Option<f64>> {
        self.per_class.iter().map(|a| a.map(f64::to_degrees)).collect()
    }

    /// CSV `class,mean_angle_deg,count,split`; missing classes leave the angle empty.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "mean_angle_deg", "count", "split"])?;
        for (c, (a, n)) in self.per_class_degrees().iter().zip(&self.counts).enumerate() {
            let angle = a.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([c.to_string(), angle, n.to_string(), self.split.as_str().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accumulates arccos(cos∠(x, w_label)) per class.
struct AngleSums {
    sums: Vec<f64>,
    counts: Vec<usize>,
    skipped: usize,
}

impl AngleSums {
    fn new(classes: usize) -> Self {
        AngleSums { sums: vec![0.0; classes], counts: vec![0; classes], skipped: 0 }
    }

    /// `unit_rows` holds one unit weight per class (C×M).
    fn add(&mut self, features: &Matrix, labels: &[usize], unit_rows: &Matrix) {
        for (k, &l) in labels.iter().enumerate() {
            let x = features.row(k);
            let n = norm(x);
            if n == 0.0 || !n.is_finite() {
                self.skipped += 1;
                continue;
            }
            let cos = (dot(x, unit_rows.row(l)) / n).clamp(-1.0, 1.0);
            self.sums[l] += cos.acos();
            self.counts[l] += 1;
        }
    }

    fn finish(self, split: Split) -> AngleReport {
        let total: usize = self.counts.iter().sum();
        let overall_mean = (total > 0).then(|| self.sums.iter().sum::<f64>() / total as f64);
        let per_class = self.sums.iter().zip(&self.counts).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect();
        AngleReport { per_class, counts: self.counts, overall_mean, skipped: self.skipped, split }
    }
}

/// Mean angle between given features (N×M) and the columns of `weights` (M×C).
pub fn mean_angles_from_features(
    features: &Matrix,
    labels: &[usize],
    weights: &Matrix,
    split: Split,
) -> Result<AngleReport> {
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: features.rows() });
    }
    if features.cols() != weights.rows() {
        return Err(Error::DimensionMismatch { expected: weights.rows(), got: features.cols() });
    }
    let classes = weights.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes });
    }
    let unit_rows = weights.normalize_columns()?.transpose();
    let mut acc = AngleSums::new(classes);
    acc.add(features, labels, &unit_rows);
    Ok(acc.finish(split))
}

/// Per-class mean angle between extracted features and the class weight.
pub fn mean_angles(params: &ModelParams, d: &Dataset) -> Result<AngleReport> {
    let weights = &params.classifier;
    if let Some(&bad) = d.labels.iter().find(|&&l| l >= weights.cols()) {
        return Err(Error::LabelOutOfRange { label: bad, classes: weights.cols() });
    }
    let unit_rows = weights.normalize_columns()?.transpose();
    let mut acc = AngleSums::new(weights.cols());
    for idx in chunks(d.len()) {
        let (xs, labels) = d.gather(&idx);
        let (features, _) = params.forward_batch(&xs)?;
        acc.add(&features, &labels, &unit_rows);
    }
    Ok(acc.finish(d.split))
}

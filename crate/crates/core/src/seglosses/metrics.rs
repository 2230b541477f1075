//! Confusion-matrix metrics with macro averaging.

use std::fs::OpenOptions;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Per-pixel argmax over the channel axis of an `[N, C, H, W]` tensor.
/// Ties go to the lowest class index.
pub fn argmax_channels(t: &Tensor) -> Result<Vec<usize>> {
    let &[n, c, h, w] = t.shape() else {
        return Err(Error::invalid_shape("argmax", format!("expected [N, C, H, W], got {:?}", t.shape())));
    };
    let p = h * w;
    let d = t.data();
    let mut out = Vec::with_capacity(n * p);
    for s in 0..n {
        for px in 0..p {
            let mut best = 0;
            for k in 1..c {
                if d[(s * c + k) * p + px] > d[(s * c + best) * p + px] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth pixel count.
    pub support: u64,
    /// Whether the class occurs in the prediction or the ground truth.
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMetrics {
    /// Global pixel accuracy.
    pub accuracy: f64,
    /// Macro averages over present classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Pixel counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn add_indices(&mut self, truth: &[usize], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::shape("confusion", &[truth.len()], &[pred.len()]));
        }
        let k = self.num_classes;
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k || p >= k {
                return Err(Error::Index { what: "class", index: t.max(p), lo: 0, hi: k - 1 });
            }
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    /// Accumulates a one-hot target against class probabilities.
    pub fn add_batch(&mut self, y: &Tensor, y_hat: &Tensor) -> Result<()> {
        if y.shape() != y_hat.shape() {
            return Err(Error::shape("segmentation_metrics", y.shape(), y_hat.shape()));
        }
        if y.shape().get(1) != Some(&self.num_classes) {
            return Err(Error::shape("segmentation_metrics classes", &y.shape()[1..2.min(y.ndim())], &[self.num_classes]));
        }
        self.add_indices(&argmax_channels(y)?, &argmax_channels(y_hat)?)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape("confusion merge", &[self.num_classes], &[other.num_classes]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn metrics(&self) -> SegmentationMetrics {
        let k = self.num_classes;
        let total: u64 = self.counts.iter().sum();
        let correct: u64 = (0..k).map(|c| self.count(c, c)).sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = self.count(c, c);
                let support: u64 = (0..k).map(|p| self.count(c, p)).sum();
                let predicted: u64 = (0..k).map(|t| self.count(t, c)).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support,
                    present: support + predicted > 0,
                }
            })
            .collect();
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.present).collect();
        let macro_avg = |f: fn(&ClassMetrics) -> f64| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
            }
        };
        SegmentationMetrics {
            accuracy: ratio(correct, total),
            precision: macro_avg(|m| m.precision),
            recall: macro_avg(|m| m.recall),
            f1: macro_avg(|m| m.f1),
            per_class,
        }
    }
}

/// Metrics of a single batch; see [`ConfusionMatrix`] to accumulate.
pub fn segmentation_metrics(y: &Tensor, y_hat: &Tensor) -> Result<SegmentationMetrics> {
    let classes = *y
        .shape()
        .get(1)
        .ok_or_else(|| Error::invalid_shape("segmentation_metrics", "missing class axis"))?;
    let mut cm = ConfusionMatrix::new(classes);
    cm.add_batch(y, y_hat)?;
    Ok(cm.metrics())
}

/// Appends one row to a metrics CSV, writing the header when the file is new.
/// Columns: `run_id, split, accuracy, precision, recall, f1, averaging`, then
/// `precision_c{k}, recall_c{k}, f1_c{k}` for each class.
pub fn write_metrics_csv(path: &Path, run_id: &str, split: &str, m: &SegmentationMetrics) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        let mut header: Vec<String> = ["run_id", "split", "accuracy", "precision", "recall", "f1", "averaging"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for k in 0..m.per_class.len() {
            header.extend([format!("precision_c{k}"), format!("recall_c{k}"), format!("f1_c{k}")]);
        }
        w.write_record(&header)?;
    }
    let mut row = vec![
        run_id.to_string(),
        split.to_string(),
        m.accuracy.to_string(),
        m.precision.to_string(),
        m.recall.to_string(),
        m.f1.to_string(),
        "macro".to_string(),
    ];
    for c in &m.per_class {
        row.extend([c.precision.to_string(), c.recall.to_string(), c.f1.to_string()]);
    }
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

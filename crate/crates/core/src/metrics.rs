//! Confusion-matrix segmentation metrics: per-class IoU and F1, mIoU and
//! mean F1.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::LabelMap;

/// K x K pixel counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction/ground-truth pair of label maps.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.height() != gt.height()
            || pred.width() != gt.width()
            || pred.classes() != self.classes
            || gt.classes() != self.classes
        {
            return Err(Error::Shape(format!(
                "confusion accumulate: pred {}x{} K={}, gt {}x{} K={}, matrix K={}",
                pred.height(),
                pred.width(),
                pred.classes(),
                gt.height(),
                gt.width(),
                gt.classes(),
                self.classes
            )));
        }
        for (p, g) in pred.data().iter().zip(gt.data()) {
            self.counts[*g as usize * self.classes + *p as usize] += 1;
        }
        Ok(())
    }

    /// Elementwise sum, so per-image matrices can be built independently and
    /// merged.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape("confusion merge: class counts differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Scores of one class with support (`TP + FP + FN > 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub iou: f64,
    pub f1: f64,
}

/// Per-class scores plus unweighted means over the classes with support.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `None` for classes with no support; those are excluded from the means.
    pub per_class: Vec<Option<ClassScore>>,
    pub miou: f64,
    pub mf1: f64,
}

/// Per-class IoU/F1 from a confusion matrix.
///
/// For class `k`: `TP = cm[k][k]`, `FP = sum of column k minus TP`,
/// `FN = sum of row k minus TP`, `IoU = TP / (TP + FP + FN)`,
/// `F1 = 2 TP / (2 TP + FP + FN)`. Classes with `TP + FP + FN = 0` are
/// excluded from the unweighted means.
pub fn iou_f1(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::InvalidInput("confusion matrix is empty".into()));
    }
    let k = cm.classes();
    let mut per_class = Vec::with_capacity(k);
    let mut sum_iou = 0.0;
    let mut sum_f1 = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        let tp = cm.count(c, c);
        let fp: u64 = (0..k).filter(|&g| g != c).map(|g| cm.count(g, c)).sum();
        let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| cm.count(c, p)).sum();
        if tp + fp + fn_ == 0 {
            per_class.push(None);
            continue;
        }
        let iou = tp as f64 / (tp + fp + fn_) as f64;
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        per_class.push(Some(ClassScore { iou, f1 }));
        sum_iou += iou;
        sum_f1 += f1;
        present += 1;
    }
    Ok(MetricsReport {
        per_class,
        miou: sum_iou / present as f64,
        mf1: sum_f1 / present as f64,
    })
}

impl MetricsReport {
    /// CSV with one row per class and a trailing summary row. Classes without
    /// support keep their row with empty score fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,iou,f1\n");
        for (k, score) in self.per_class.iter().enumerate() {
            match score {
                Some(s) => writeln!(out, "class_{k},{:.6},{:.6}", s.iou, s.f1).unwrap(),
                None => writeln!(out, "class_{k},,").unwrap(),
            }
        }
        writeln!(out, "mean,{:.6},{:.6}", self.miou, self.mf1).unwrap();
        out
    }
}

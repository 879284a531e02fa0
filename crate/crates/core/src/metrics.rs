//! Confusion-matrix segmentation metrics.

use std::collections::BTreeSet;
use std::ops::AddAssign;

use crate::error::{Error, Result};

/// `counts[gt * k + pred]`; pixels whose ground truth is excluded are never counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    excluded: BTreeSet<usize>,
}

impl ConfusionMatrix {
    pub fn new(k: usize, excluded: impl IntoIterator<Item = usize>) -> Self {
        Self { k, counts: vec![0; k * k], excluded: excluded.into_iter().collect() }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn excluded(&self) -> &BTreeSet<usize> {
        &self.excluded
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn update(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape("confusion_update", format!("{} predictions, {} labels", pred.len(), gt.len())));
        }
        if let Some(&bad) = pred.iter().chain(gt).find(|&&c| c >= self.k) {
            return Err(Error::ClassOutOfRange { class: bad, classes: self.k });
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if !self.excluded.contains(&g) {
                self.counts[g * self.k + p] += 1;
            }
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` for excluded classes and for classes
    /// absent from both prediction and ground truth.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                if self.excluded.contains(&c) {
                    return None;
                }
                let tp = self.count(c, c);
                let fn_: u64 = (0..self.k).map(|p| self.count(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.k).map(|g| self.count(g, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean of the defined per-class IoUs, `None` when no class is defined.
    pub fn miou(&self) -> Option<f64> {
        let vals: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Fraction of counted pixels on the diagonal.
    pub fn pixel_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.k).map(|c| self.count(c, c)).sum::<u64>() as f64 / total as f64
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.k, rhs.k, "merging confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

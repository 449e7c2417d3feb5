//! Pixel accuracy, mean F1 and mean IoU over labeled pixels.
//!
//! Per-class F1 is `2TP / (2TP + FP + FN)` and IoU is `TP / (TP + FP + FN)`.
//! Means run over classes that occur in the truth; classes without truth
//! pixels are left out rather than scored as zero.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::imagery::{LabelMask, UNLABELED};
use crate::{Error, Result};

/// Rows are truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: alloc::vec![0; classes * classes],
            total: 0,
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn truth_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn predicted_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    fn check(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::EmptyConfusion("no labeled pixels"));
        }
        Ok(())
    }

    pub fn pix_acc(&self) -> Result<f64> {
        self.check()?;
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / self.total as f64)
    }

    /// `None` for classes absent from the truth.
    pub fn class_f1(&self, c: usize) -> Option<f64> {
        let support = self.truth_count(c);
        if support == 0 {
            return None;
        }
        let tp = self.true_positives(c);
        let fp = self.predicted_count(c) - tp;
        let fn_ = support - tp;
        Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
    }

    pub fn class_iou(&self, c: usize) -> Option<f64> {
        let support = self.truth_count(c);
        if support == 0 {
            return None;
        }
        let tp = self.true_positives(c);
        let fp = self.predicted_count(c) - tp;
        let fn_ = support - tp;
        Some(tp as f64 / (tp + fp + fn_) as f64)
    }

    fn mean_over_present(&self, f: impl Fn(usize) -> Option<f64>) -> Result<f64> {
        self.check()?;
        let vals: Vec<f64> = (0..self.classes).filter_map(f).collect();
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_f1(&self) -> Result<f64> {
        self.mean_over_present(|c| self.class_f1(c))
    }

    pub fn mean_iou(&self) -> Result<f64> {
        self.mean_over_present(|c| self.class_iou(c))
    }
}

/// Tallies every pixel whose truth is labeled.
pub fn confusion(pred: &LabelMask, truth: &LabelMask) -> Result<ConfusionMatrix> {
    pred.check_dims(truth.width, truth.height)?;
    let c = truth.classes();
    if pred.classes() != c {
        return Err(Error::Dimensions(format!(
            "prediction has {} classes, truth has {}",
            pred.classes(),
            c
        )));
    }
    let mut cm = ConfusionMatrix::new(c);
    for (p, (&t, &y)) in truth.labels.iter().zip(&pred.labels).enumerate() {
        if t == UNLABELED {
            continue;
        }
        if y == UNLABELED {
            return Err(Error::Mask(format!("prediction is unlabeled at labeled pixel {}", p)));
        }
        cm.add(t as usize, y as usize);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub f1: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pix_acc: f64,
    pub mean_f1: f64,
    pub mean_iou: f64,
    pub labeled_pixels: u64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix, palette: &[String]) -> Result<Self> {
        Ok(MetricsReport {
            pix_acc: cm.pix_acc()?,
            mean_f1: cm.mean_f1()?,
            mean_iou: cm.mean_iou()?,
            labeled_pixels: cm.total,
            per_class: (0..cm.classes)
                .map(|c| ClassMetrics {
                    name: palette.get(c).cloned().unwrap_or_default(),
                    support: cm.truth_count(c),
                    f1: cm.class_f1(c),
                    iou: cm.class_iou(c),
                })
                .collect(),
        })
    }
}

/// Confusion matrix and all metrics in one go.
pub fn evaluate(pred: &LabelMask, truth: &LabelMask) -> Result<MetricsReport> {
    let cm = confusion(pred, truth)?;
    MetricsReport::from_confusion(&cm, &truth.palette)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn palette(c: usize) -> Vec<String> {
        (0..c).map(|i| i.to_string()).collect()
    }

    #[test]
    fn perfect_prediction() {
        let t = LabelMask::new(3, 1, vec![0, 1, 2], palette(3)).unwrap();
        let cm = confusion(&t, &t).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(cm.get(a, b), u64::from(a == b));
            }
        }
        assert_eq!(cm.pix_acc().unwrap(), 1.0);
        assert_eq!(cm.mean_f1().unwrap(), 1.0);
        assert_eq!(cm.mean_iou().unwrap(), 1.0);
    }

    #[test]
    fn binary_hand_values() {
        // class 1: TP=3, FP=1, FN=1; class 0 gets TN=5
        let truth = vec![1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let pred = vec![1, 1, 1, 0, 1, 0, 0, 0, 0, 0];
        let t = LabelMask::new(10, 1, truth, palette(2)).unwrap();
        let p = LabelMask::new(10, 1, pred, palette(2)).unwrap();
        let cm = confusion(&p, &t).unwrap();
        assert_eq!(cm.class_f1(1).unwrap(), 0.75);
        assert_eq!(cm.class_iou(1).unwrap(), 0.6);
    }

    #[test]
    fn all_class_zero_on_balanced_truth() {
        let t = LabelMask::new(4, 1, vec![0, 1, 0, 1], palette(2)).unwrap();
        let p = LabelMask::new(4, 1, vec![0; 4], palette(2)).unwrap();
        assert_eq!(confusion(&p, &t).unwrap().pix_acc().unwrap(), 0.5);
    }

    #[test]
    fn unlabeled_truth_is_empty() {
        let t = LabelMask::unlabeled(3, 3, palette(2));
        let p = LabelMask::new(3, 3, vec![0; 9], palette(2)).unwrap();
        let cm = confusion(&p, &t).unwrap();
        assert_eq!(cm.total, 0);
        assert!(cm.pix_acc().is_err());
        assert!(cm.mean_f1().is_err());
        assert!(evaluate(&p, &t).is_err());
    }

    #[test]
    fn absent_classes_are_excluded_from_means() {
        let t = LabelMask::new(2, 1, vec![0, 0], palette(3)).unwrap();
        let p = LabelMask::new(2, 1, vec![0, 2], palette(3)).unwrap();
        let cm = confusion(&p, &t).unwrap();
        // only class 0 is present: F1 = 2/(2+0+1)
        assert!((cm.mean_f1().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((cm.mean_iou().unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(cm.class_f1(2), None);
    }

    fn masks() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (
            proptest::collection::vec(prop_oneof![0u8..4, Just(UNLABELED)], 25),
            proptest::collection::vec(0u8..4, 25),
        )
    }

    proptest! {
        #[test]
        fn iou_never_exceeds_f1((truth, pred) in masks()) {
            let t = LabelMask::new(5, 5, truth, palette(4)).unwrap();
            let p = LabelMask::new(5, 5, pred, palette(4)).unwrap();
            let cm = confusion(&p, &t).unwrap();
            for c in 0..4 {
                if let (Some(f), Some(i)) = (cm.class_f1(c), cm.class_iou(c)) {
                    prop_assert!(i <= f + 1e-15);
                }
            }
            if cm.total > 0 {
                let (a, f, i) = (cm.pix_acc().unwrap(), cm.mean_f1().unwrap(), cm.mean_iou().unwrap());
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!(0.0 <= i && i <= f + 1e-15 && f <= 1.0);
            }
        }

        #[test]
        fn relabeling_leaves_metrics_unchanged((truth, pred) in masks(), perm in Just([2u8, 0, 3, 1])) {
            let relabel = |v: &[u8]| -> Vec<u8> { v.iter().map(|&x| if x == UNLABELED { x } else { perm[x as usize] }).collect() };
            let t = LabelMask::new(5, 5, truth.clone(), palette(4)).unwrap();
            let p = LabelMask::new(5, 5, pred.clone(), palette(4)).unwrap();
            let t2 = LabelMask::new(5, 5, relabel(&truth), palette(4)).unwrap();
            let p2 = LabelMask::new(5, 5, relabel(&pred), palette(4)).unwrap();
            let a = confusion(&p, &t).unwrap();
            let b = confusion(&p2, &t2).unwrap();
            if a.total > 0 {
                prop_assert_eq!(a.pix_acc().unwrap(), b.pix_acc().unwrap());
                prop_assert!((a.mean_f1().unwrap() - b.mean_f1().unwrap()).abs() < 1e-12);
                prop_assert!((a.mean_iou().unwrap() - b.mean_iou().unwrap()).abs() < 1e-12);
            }
        }
    }
}

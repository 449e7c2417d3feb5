use alloc::format;
use alloc::vec::Vec;

use super::{Dataset, SoftmaxDistribution};
use crate::{Error, Result};

/// Non-learned baseline: assigns the class whose training mean is closest in L2.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    pub centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit(data: &Dataset, classes: usize) -> Result<Self> {
        let len = data.feature_len;
        let mut sums = alloc::vec![alloc::vec![0.0; len]; classes];
        let mut counts = alloc::vec![0usize; classes];
        for i in 0..data.len() {
            let y = data.labels[i];
            if y >= classes {
                return Err(Error::Classifier(format!("label {} not below class count {}", y, classes)));
            }
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(data.feature(i)) {
                *s += v;
            }
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Classifier(format!("class {} has no training samples", c)));
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
        Ok(NearestCentroid { centroids: sums })
    }

    /// Nearest centroid; ties go to the lowest class index.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, m) in self.centroids.iter().enumerate() {
            let d: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        best
    }

    /// One-hot distribution on the nearest centroid.
    pub fn predict(&self, x: &[f64]) -> SoftmaxDistribution {
        let mut p = alloc::vec![0.0; self.centroids.len()];
        p[self.predict_class(x)] = 1.0;
        SoftmaxDistribution(p)
    }
}

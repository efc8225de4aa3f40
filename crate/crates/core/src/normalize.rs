//! Z-score normalization of feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, LabeledExample};

/// Per-dimension mean and population standard deviation. Dimensions with zero
/// variance are dropped from the normalized space and listed in `dropped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std_dev: Vec<f64>,
    pub dropped: Vec<usize>,
}

impl Normalizer {
    /// Fits on raw coordinate rows of equal width.
    pub fn fit_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidInput(
                "cannot fit a normalizer on an empty pool".into(),
            ));
        };
        let dims = first.len();
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::InvalidInput("rows of unequal width".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dims];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std_dev = vec![0.0; dims];
        for row in rows {
            for d in 0..dims {
                std_dev[d] += (row[d] - mean[d]).powi(2);
            }
        }
        std_dev.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        let dropped: Vec<usize> = (0..dims)
            .filter(|&d| std_dev[d] <= 1e-12 * mean[d].abs().max(1.0))
            .collect();
        if dropped.len() == dims {
            return Err(Error::InvalidInput(
                "degenerate pool: fewer than two distinct feature vectors".into(),
            ));
        }
        Ok(Normalizer {
            mean,
            std_dev,
            dropped,
        })
    }

    pub fn fit_vectors<'a>(vectors: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = vectors
            .into_iter()
            .map(|v| v.coordinates().to_vec())
            .collect();
        Self::fit_rows(&rows)
    }

    /// Number of dimensions kept in normalized space.
    pub fn dims(&self) -> usize {
        self.mean.len() - self.dropped.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        (0..self.mean.len())
            .filter(|d| !self.dropped.contains(d))
            .map(|d| (row[d] - self.mean[d]) / self.std_dev[d])
            .collect()
    }

    pub fn transform(&self, features: &FeatureVector) -> Vec<f64> {
        self.transform_row(&features.coordinates())
    }
}

/// Fits z-score parameters on the feature vectors of a labelled pool.
pub fn fit_normalizer(pool: &[LabeledExample]) -> Result<Normalizer> {
    Normalizer::fit_vectors(pool.iter().map(|e| &e.features))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

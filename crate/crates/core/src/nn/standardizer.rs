use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// Lower clamp on σ so dead or constant neurons do not divide by zero.
pub const EPSILON_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizerMode {
    /// μ, σ come from the current minibatch.
    BatchStats,
    /// μ, σ are fixed values from a calibration pass.
    Frozen,
}

/// Normalization-only standardizer: `(z − μ) / σ`, no learned affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mode: StandardizerMode,
}

impl Standardizer {
    pub fn batch_stats(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
            mode: StandardizerMode::BatchStats,
        }
    }

    pub fn frozen(mean: Vec<f64>, std: Vec<f64>) -> Self {
        let std = std.into_iter().map(|s| s.max(EPSILON_STD)).collect();
        Self {
            mean,
            std,
            mode: StandardizerMode::Frozen,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Statistics to apply to the pre-activations `z` (batch × width).
    pub(crate) fn stats_for(&self, z: &Matrix) -> LayerStats {
        match self.mode {
            StandardizerMode::BatchStats => LayerStats::from_batch(z),
            StandardizerMode::Frozen => LayerStats {
                mean: self.mean.clone(),
                std: self.std.clone(),
                clamped: vec![false; self.len()],
                from_batch: false,
            },
        }
    }
}

/// μ, σ actually used by one hidden layer during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// σ hit the `EPSILON_STD` floor (its gradient is then zero).
    pub clamped: Vec<bool>,
    pub from_batch: bool,
}

impl LayerStats {
    /// Population mean and standard deviation per column, two passes.
    pub fn from_batch(z: &Matrix) -> Self {
        let (rows, cols) = z.shape();
        let n = rows as f64;
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(z.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        // A constant column must standardize to exactly zero, so take its
        // value verbatim instead of the rounded sum.
        if rows > 0 {
            for (c, m) in mean.iter_mut().enumerate() {
                let first = z.get(0, c);
                if (1..rows).all(|r| z.get(r, c) == first) {
                    *m = first;
                }
            }
        }
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut clamped = vec![false; cols];
        let std = var
            .iter()
            .zip(clamped.iter_mut())
            .map(|(s, c)| {
                let sd = (s / n).sqrt();
                if sd < EPSILON_STD {
                    *c = true;
                    EPSILON_STD
                } else {
                    sd
                }
            })
            .collect();
        Self {
            mean,
            std,
            clamped,
            from_batch: true,
        }
    }
}

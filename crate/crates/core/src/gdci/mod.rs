//! Gradient descent with compressed iterates.
//!
//! Every iterate passes through a random coordinate mask `M(x)` that keeps
//! `x_i / ξ` with probability `ξ` and zeroes it otherwise, then takes one
//! stochastic gradient step from the compressed point. This module holds the
//! operator, least-squares test objectives, the recursion itself, the
//! convergence bounds and a verification report tying them together.

mod bounds;
mod constants;
mod objective;
mod run;
mod verify;

pub use bounds::{corollary_bound_rhs, theorem_bound_rhs, TheoremParams};
pub use constants::{estimate_constants, ConstantOptions, Constants};
pub use objective::{LeastSquares, Objective, Quadratic};
pub use run::{gdci_run, gdci_runs, mean_grad_norm_sq, GdciTrace};
pub use verify::{
    lemma2_probe, verify, BoundCheck, GdciReport, Lemma2Point, Lemma2Report, VerifyOptions,
    PROPERTY_XIS, Q_CAVEAT,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IstError, Result};
use crate::exec::{self, ExecMode};
use crate::rng::{stream_rng, IstRng};

const CHECK_CHUNK: usize = 4096;

/// Relative tolerance of the variance check.
pub const VARIANCE_TOLERANCE: f64 = 0.02;

/// Coordinate mask with keep probability `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressOp {
    xi: f64,
}

impl CompressOp {
    pub fn new(xi: f64) -> Result<Self> {
        if !(xi > 0.0 && xi <= 1.0) {
            return Err(IstError::Config(format!("ξ = {xi} must lie in (0, 1]")));
        }
        Ok(Self { xi })
    }

    /// Operator with relative variance `omega`, i.e. `ξ = 1/(1+ω)`.
    pub fn from_omega(omega: f64) -> Result<Self> {
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(IstError::Config(format!("ω = {omega} must be ≥ 0")));
        }
        Self::new(1.0 / (1.0 + omega))
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// `ω = (1 − ξ)/ξ`.
    pub fn omega(&self) -> f64 {
        (1.0 - self.xi) / self.xi
    }

    pub fn compress(&self, x: &[f64], rng: &mut IstRng) -> Vec<f64> {
        if self.xi == 1.0 {
            return x.to_vec();
        }
        x.iter()
            .map(|&v| if rng.gen::<f64>() < self.xi { v / self.xi } else { 0.0 })
            .collect()
    }
}

/// Per-coordinate Monte-Carlo mean of `M(x)` against `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasednessReport {
    pub xi: f64,
    pub samples: u64,
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// Largest `|mean_i − x_i| / se_i`; 0 when every coordinate is exact.
    pub max_z: f64,
    pub passed: bool,
}

/// Monte-Carlo mean of `‖M(x) − x‖²` against `ω‖x‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub xi: f64,
    pub samples: u64,
    pub expected: f64,
    pub observed: f64,
    pub standard_error: f64,
    pub relative_error: f64,
    pub passed: bool,
}

/// Per-chunk sums of `d = M(x) − x`, `d²` and `‖d‖²`, `(‖d‖²)²`.
struct Sums {
    d: Vec<f64>,
    d_sq: Vec<f64>,
    norm: f64,
    norm_sq: f64,
}

fn draw_sums(op: CompressOp, x: &[f64], samples: u64, seed: u64, stream: &str, mode: ExecMode) -> Sums {
    let parts = exec::map_vec(mode, exec::chunks(samples as usize, CHECK_CHUNK), |(start, len)| {
        let mut rng = stream_rng(seed, stream, (start / CHECK_CHUNK) as u64);
        let mut s = Sums {
            d: vec![0.0; x.len()],
            d_sq: vec![0.0; x.len()],
            norm: 0.0,
            norm_sq: 0.0,
        };
        for _ in 0..len {
            let y = op.compress(x, &mut rng);
            let mut norm = 0.0;
            for (i, (yi, xi)) in y.iter().zip(x).enumerate() {
                let d = yi - xi;
                s.d[i] += d;
                s.d_sq[i] += d * d;
                norm += d * d;
            }
            s.norm += norm;
            s.norm_sq += norm * norm;
        }
        s
    });
    let mut total = Sums {
        d: vec![0.0; x.len()],
        d_sq: vec![0.0; x.len()],
        norm: 0.0,
        norm_sq: 0.0,
    };
    for p in parts {
        for (a, b) in total.d.iter_mut().zip(&p.d) {
            *a += b;
        }
        for (a, b) in total.d_sq.iter_mut().zip(&p.d_sq) {
            *a += b;
        }
        total.norm += p.norm;
        total.norm_sq += p.norm_sq;
    }
    total
}

fn sample_se(sum: f64, sum_sq: f64, n: f64) -> f64 {
    let mean = sum / n;
    ((sum_sq / n - mean * mean).max(0.0) / n).sqrt()
}

/// Check `E[M(x)] = x` coordinate-wise within three standard errors.
pub fn check_unbiasedness(
    op: CompressOp,
    x: &[f64],
    samples: u64,
    seed: u64,
    mode: ExecMode,
) -> Result<UnbiasednessReport> {
    if samples < 2 {
        return Err(IstError::Config("need at least 2 samples".into()));
    }
    let n = samples as f64;
    let sums = draw_sums(op, x, samples, seed, "compress-mean", mode);
    let mut max_z: f64 = 0.0;
    let mut mean = Vec::with_capacity(x.len());
    let mut standard_error = Vec::with_capacity(x.len());
    for (i, &xi) in x.iter().enumerate() {
        let bias = sums.d[i] / n;
        let se = sample_se(sums.d[i], sums.d_sq[i], n);
        let z = if se > 0.0 {
            bias.abs() / se
        } else if bias == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
        mean.push(xi + bias);
        standard_error.push(se);
    }
    Ok(UnbiasednessReport {
        xi: op.xi(),
        samples,
        mean,
        standard_error,
        max_z,
        passed: max_z <= 3.0,
    })
}

/// Check `E‖M(x) − x‖² = ω‖x‖²` within `VARIANCE_TOLERANCE` relative error.
pub fn check_variance(
    op: CompressOp,
    x: &[f64],
    samples: u64,
    seed: u64,
    mode: ExecMode,
) -> Result<VarianceReport> {
    if samples < 2 {
        return Err(IstError::Config("need at least 2 samples".into()));
    }
    let n = samples as f64;
    let sums = draw_sums(op, x, samples, seed, "compress-variance", mode);
    let expected = op.omega() * crate::linalg::norm_sq(x);
    let observed = sums.norm / n;
    let relative_error = if expected > 0.0 {
        (observed - expected).abs() / expected
    } else if observed == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(VarianceReport {
        xi: op.xi(),
        samples,
        expected,
        observed,
        standard_error: sample_se(sums.norm, sums.norm_sq, n),
        relative_error,
        passed: relative_error <= VARIANCE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn xi_bounds() {
        assert!(CompressOp::new(0.0).is_err());
        assert!(CompressOp::new(1.5).is_err());
        assert_eq!(CompressOp::new(0.5).unwrap().omega(), 1.0);
        assert!((CompressOp::from_omega(0.25).unwrap().xi() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn trivial_inputs() {
        let mut rng = rng_from_seed(0);
        let x = vec![1.5, -2.0, 3.0];
        assert_eq!(CompressOp::new(1.0).unwrap().compress(&x, &mut rng), x);
        let op = CompressOp::new(0.3).unwrap();
        assert_eq!(op.compress(&[0.0; 4], &mut rng), vec![0.0; 4]);
    }

    #[test]
    fn entries_are_kept_scaled_or_zeroed() {
        let mut rng = rng_from_seed(1);
        let op = CompressOp::new(0.25).unwrap();
        let x: Vec<f64> = (1..=50).map(f64::from).collect();
        for (y, x) in op.compress(&x, &mut rng).iter().zip(&x) {
            assert!(*y == 0.0 || *y == x * 4.0);
        }
    }

    #[test]
    fn exact_at_xi_one() {
        let op = CompressOp::new(1.0).unwrap();
        let x = vec![2.0, 4.0];
        let u = check_unbiasedness(op, &x, 1000, 0, ExecMode::Sequential).unwrap();
        assert_eq!(u.mean, x);
        assert_eq!(u.max_z, 0.0);
        let v = check_variance(op, &x, 1000, 0, ExecMode::Sequential).unwrap();
        assert_eq!(v.observed, 0.0);
        assert!(v.passed);
    }
}

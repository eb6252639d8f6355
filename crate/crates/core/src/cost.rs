//! Closed-form per-step traffic and FLOP counts for data-parallel and IST
//! training of a feedforward network.
//!
//! Traffic is counted in floats received by the sites (inflow). Only weight
//! matrices are counted; biases are left out. For IST the two outer matrices
//! (`W^1`, `W^t`) are partitioned across sites and each middle matrix
//! contributes a `1/n` fraction, all amortized over `J` local steps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{IstError, Result};
use crate::nn::ModelDims;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostQuery {
    pub dims: ModelDims,
    pub n: usize,
    pub local_iters: usize,
    pub batch: usize,
}

impl CostQuery {
    pub fn new(dims: ModelDims, n: usize, local_iters: usize, batch: usize) -> Result<Self> {
        if n == 0 || local_iters == 0 || batch == 0 {
            return Err(IstError::Config("n, J and B must all be ≥ 1".into()));
        }
        Ok(Self {
            dims,
            n,
            local_iters,
            batch,
        })
    }

    fn product(&self, l: usize) -> f64 {
        (self.dims.width(l - 1) * self.dims.width(l)) as f64
    }

    /// `N_0 N_1 + N_{t-1} N_t`; a single-hidden-layer net counts both once.
    fn outer(&self) -> f64 {
        let t = self.dims.depth();
        self.product(1) + self.product(t)
    }

    /// `Σ_{l=2}^{t-1} N_{l-1} N_l`.
    fn middle(&self) -> f64 {
        let t = self.dims.depth();
        (2..t).map(|l| self.product(l)).sum()
    }

    fn all(&self) -> f64 {
        self.dims.weight_count() as f64
    }
}

/// `n · Σ_{l=1}^{t} N_{l-1} N_l`.
pub fn dp_traffic_per_step(q: &CostQuery) -> f64 {
    q.n as f64 * q.all()
}

/// Floats sent to all sites in one IST sync round:
/// `N_0 N_1 + N_{t-1} N_t + Σ_mid N_{l-1} N_l / n`.
pub fn ist_traffic_per_round(q: &CostQuery) -> f64 {
    q.outer() + q.middle() / q.n as f64
}

/// [`ist_traffic_per_round`] amortized over `J` local steps.
pub fn ist_traffic_per_step(q: &CostQuery) -> f64 {
    ist_traffic_per_round(q) / q.local_iters as f64
}

/// `4 B Σ N_{l-1} N_l`.
pub fn dp_flops_per_step(q: &CostQuery) -> f64 {
    4.0 * q.batch as f64 * q.all()
}

/// Per site: `4 B N_0 N_1 + 4 B N_{t-1} N_t + 4 B Σ_mid N_{l-1} N_l / n`.
pub fn ist_flops_per_step(q: &CostQuery) -> f64 {
    let b = q.batch as f64;
    4.0 * b * q.outer() + 4.0 * b * q.middle() / q.n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub n: usize,
    pub dp_traffic: f64,
    pub ist_traffic: f64,
    pub dp_flops: f64,
    pub ist_flops: f64,
}

pub fn emit_cost_sweep(
    dims: &ModelDims,
    batch: usize,
    local_iters: usize,
    n_range: &[usize],
) -> Result<Vec<CostRow>> {
    if n_range.is_empty() {
        return Err(IstError::Config("empty n range".into()));
    }
    n_range
        .iter()
        .map(|&n| {
            let q = CostQuery::new(dims.clone(), n, local_iters, batch)?;
            Ok(CostRow {
                n,
                dp_traffic: dp_traffic_per_step(&q),
                ist_traffic: ist_traffic_per_step(&q),
                dp_flops: dp_flops_per_step(&q),
                ist_flops: ist_flops_per_step(&q),
            })
        })
        .collect()
}

pub const COST_CSV_HEADER: &str = "n,dp_traffic,ist_traffic,dp_flops,ist_flops";

pub fn cost_sweep_csv(rows: &[CostRow], comment: &str) -> String {
    let mut out = format!("# ist-costmodel v1 {comment}\n{COST_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.n, r.dp_traffic, r.ist_traffic, r.dp_flops, r.ist_flops
        );
    }
    out
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CompressOp, Objective};
use crate::error::{IstError, Result};
use crate::exec::{self, ExecMode};
use crate::linalg::norm_sq;
use crate::rng::{derive_seed, stream_rng};

/// One GDCI trajectory; every vector has `T + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdciTrace {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub grad_norm_sq: Vec<f64>,
    pub values: Vec<f64>,
}

impl GdciTrace {
    fn with_capacity(n: usize) -> Self {
        Self {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            grad_norm_sq: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn min_grad_norm_sq(&self) -> f64 {
        self.grad_norm_sq.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest Euclidean norm over all iterates and compressed iterates.
    pub fn max_norm(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.y)
            .map(|v| norm_sq(v).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Run `x_{t+1} = y_t − η ∇f_{i_t}(y_t)` with `y_t = M(x_t)` for `t < T`.
///
/// Masks and component indices come from separate streams of `seed`, so at
/// `ξ = 1` the index sequence and hence the trajectory match plain SGD.
pub fn gdci_run<O: Objective + ?Sized>(
    obj: &O,
    op: CompressOp,
    eta: f64,
    iterations: usize,
    seed: u64,
    x0: &[f64],
) -> Result<GdciTrace> {
    if x0.len() != obj.dim() {
        return Err(IstError::Dimension(format!(
            "x0 has {} entries, objective has dimension {}",
            x0.len(),
            obj.dim()
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(IstError::Config(format!("step size {eta} must be > 0")));
    }
    let mut mask_rng = stream_rng(seed, "gdci-mask", 0);
    let mut index_rng = stream_rng(seed, "gdci-index", 0);
    let n = obj.components();
    let mut trace = GdciTrace::with_capacity(iterations + 1);
    let mut x = x0.to_vec();
    for t in 0..=iterations {
        let y = op.compress(&x, &mut mask_rng);
        let g = obj.gradient(&x);
        let value = obj.value(&x);
        let grad_norm_sq = norm_sq(&g);
        let finite = value.is_finite() && grad_norm_sq.is_finite() && y.iter().all(|v| v.is_finite());
        trace.grad_norm_sq.push(grad_norm_sq);
        trace.values.push(value);
        trace.x.push(x.clone());
        trace.y.push(y.clone());
        if !finite {
            return Err(IstError::GdciDivergence {
                iteration: t,
                trace: Box::new(trace),
            });
        }
        if t == iterations {
            break;
        }
        let i = index_rng.gen_range(0..n);
        let gi = obj.component_gradient(i, &y);
        x = y.iter().zip(&gi).map(|(y, g)| y - eta * g).collect();
    }
    Ok(trace)
}

/// `runs` independent trajectories; run `r` uses seed `(seed, r)`.
pub fn gdci_runs<O: Objective + ?Sized>(
    obj: &O,
    op: CompressOp,
    eta: f64,
    iterations: usize,
    seed: u64,
    x0: &[f64],
    runs: usize,
    mode: ExecMode,
) -> Result<Vec<GdciTrace>> {
    exec::map_range(mode, runs, |r| {
        gdci_run(obj, op, eta, iterations, derive_seed(seed, "gdci-run", r as u64), x0)
    })
    .into_iter()
    .collect()
}

/// Per-step mean of `‖∇f(x_t)‖²` across traces of equal length.
pub fn mean_grad_norm_sq(traces: &[GdciTrace]) -> Result<Vec<f64>> {
    let first = traces.first().ok_or_else(|| IstError::Empty("no traces".into()))?;
    let len = first.len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(IstError::Dimension("traces differ in length".into()));
    }
    let mut mean = vec![0.0; len];
    for t in traces {
        for (m, g) in mean.iter_mut().zip(&t.grad_norm_sq) {
            *m += g;
        }
    }
    let k = traces.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok(mean)
}

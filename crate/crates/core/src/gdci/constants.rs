use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use rand::Rng;

use super::{CompressOp, LeastSquares, Objective, TheoremParams};
use crate::error::{IstError, Result};
use crate::exec::{self, ExecMode};
use crate::linalg::norm_sq;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantOptions {
    /// Radius of the origin-centred ball holding every iterate.
    pub radius: f64,
    /// Fixed `M_f`; `M` is then the smallest value the ball bound allows.
    pub m_f: f64,
    /// Random points of the ball on which the `(M, M_f)` inequality is checked.
    pub grid_points: usize,
    /// Mask draws per probe point when estimating `B` and `θ`.
    pub inner_samples: usize,
    pub seed: u64,
}

impl Default for ConstantOptions {
    fn default() -> Self {
        Self {
            radius: 1.0,
            m_f: 0.5,
            grid_points: 2000,
            inner_samples: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub l_max: f64,
    pub l_min: f64,
    /// Smallest / largest Hessian eigenvalue; `mu` is the former.
    pub mu: f64,
    pub hessian_max: f64,
    pub x_star: Vec<f64>,
    pub x_star_norm_sq: f64,
    pub f_star: f64,
    pub radius: f64,
    pub q: f64,
    pub m: f64,
    pub m_f: f64,
    pub grid_points: usize,
    /// Largest `E_i‖∇f_i‖² − (M + M_f‖∇f‖²)` seen on the grid (≤ 0 passes).
    pub grid_max_excess: f64,
    pub grid_ok: bool,
    pub b_noise: f64,
    pub theta: f64,
    pub inner_samples: usize,
}

impl Constants {
    pub fn params(&self, omega: f64) -> TheoremParams {
        TheoremParams {
            l_max: self.l_max,
            mu: self.mu,
            m: self.m,
            m_f: self.m_f,
            q: self.q,
            b_noise: self.b_noise,
            theta: self.theta,
            omega,
            x_star_norm_sq: self.x_star_norm_sq,
        }
    }
}

/// `E_i ‖∇f_i(x)‖² = xᵀSx − 2sᵀx + c` for least squares.
struct SecondMoment {
    s: DMatrix<f64>,
    lin: DVector<f64>,
    c: f64,
}

fn second_moment(obj: &LeastSquares) -> SecondMoment {
    let a = obj.design();
    let b = obj.targets();
    let (n, p) = a.shape();
    let mut s = DMatrix::zeros(p, p);
    let mut lin = DVector::zeros(p);
    let mut c = 0.0;
    for i in 0..n {
        let ai = DVector::from_column_slice(a.row(i));
        let w = ai.norm_squared();
        s += &ai * ai.transpose() * w;
        lin += &ai * (w * b[i]);
        c += w * b[i] * b[i];
    }
    let k = n as f64;
    SecondMoment {
        s: s / k,
        lin: lin / k,
        c: c / k,
    }
}

fn uniform_in_ball(p: usize, radius: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    let norm = norm_sq(&dir).sqrt();
    let r = radius * rng.gen::<f64>().powf(1.0 / p as f64);
    dir.iter().map(|d| d * r / norm).collect()
}

/// Bias of `E[∇f_{i}(M(x)) | x]` relative to `∇f(x)` at one point, deflated
/// by three standard errors of its Monte-Carlo estimate. The average over
/// components is taken exactly; only the mask is sampled. For ξ near 1 a
/// coordinate is dropped only a handful of times, so the sample spread is
/// floored by its closed form `ω Σ_j x_j² ‖H e_j‖² / K`.
fn deflated_bias(obj: &LeastSquares, op: CompressOp, x: &[f64], samples: usize, rng: &mut impl Rng) -> f64 {
    let base = obj.gradient(x);
    let p = x.len();
    let mut sum = vec![0.0; p];
    let mut sum_sq = 0.0;
    let mut mask_rng = crate::rng::rng_from_seed(rng.gen());
    for _ in 0..samples {
        let y = op.compress(x, &mut mask_rng);
        let e: Vec<f64> = obj.gradient(&y).iter().zip(&base).map(|(g, b)| g - b).collect();
        sum.iter_mut().zip(&e).for_each(|(s, v)| *s += v);
        sum_sq += norm_sq(&e);
    }
    let k = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / k).collect();
    let spread = (sum_sq / k - norm_sq(&mean)).max(0.0);
    let h = obj.hessian();
    let closed: f64 = (0..p)
        .map(|j| x[j] * x[j] * h.column(j).norm_squared())
        .sum::<f64>()
        * op.omega();
    let se = (spread.max(closed) / (k - 1.0)).sqrt();
    (norm_sq(&mean).sqrt() - 3.0 * se).max(0.0)
}

/// Assumption constants of a least-squares instance.
///
/// `L_i = ‖a_i‖²`; `μ` is the smallest Hessian eigenvalue; `Q` bounds
/// `‖∇f‖` on the ball via `λ_max(H)·R + ‖∇f(0)‖`. `M` bounds
/// `E_i‖∇f_i(x)‖² − M_f‖∇f(x)‖²` on the ball through the quadratic form's
/// top eigenvalue, then the inequality is re-checked on random ball points.
/// `B` and `θ` come from mask Monte-Carlo at `probes`.
pub fn estimate_constants(
    obj: &LeastSquares,
    op: CompressOp,
    probes: &[Vec<f64>],
    opts: &ConstantOptions,
    mode: ExecMode,
) -> Result<Constants> {
    if !(0.0..1.0).contains(&opts.m_f) {
        return Err(IstError::Inadmissible(format!("M_f = {} must lie in [0, 1)", opts.m_f)));
    }
    if !(opts.radius >= 0.0 && opts.radius.is_finite()) {
        return Err(IstError::Config(format!("radius {} must be ≥ 0", opts.radius)));
    }
    if opts.inner_samples < 2 {
        return Err(IstError::Config("need at least 2 inner samples".into()));
    }
    let p = obj.dim();
    let l = obj.smoothness();
    let (mu, hessian_max) = obj.hessian_spectrum();
    let h = obj.hessian();
    let g0 = obj.linear_term();
    let r = opts.radius;

    let q = hessian_max * r + g0.norm();

    let sm = second_moment(obj);
    let mf = opts.m_f;
    let pm = &sm.s - h * h * mf;
    let rv = &sm.lin - h * g0 * mf;
    let cc = sm.c - mf * g0.norm_squared();
    let top = pm.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m = (top.max(0.0) * r * r + 2.0 * rv.norm() * r + cc).max(0.0);

    let mut grid_rng = stream_rng(opts.seed, "gdci-grid", 0);
    let mut grid_max_excess = f64::NEG_INFINITY;
    let points = (0..opts.grid_points).map(|_| uniform_in_ball(p, r, &mut grid_rng));
    for x in points.chain(probes.iter().cloned()) {
        let xv = DVector::from_column_slice(&x);
        let lhs = xv.dot(&(&sm.s * &xv)) - 2.0 * sm.lin.dot(&xv) + sm.c;
        let rhs = m + mf * norm_sq(&obj.gradient(&x));
        grid_max_excess = grid_max_excess.max(lhs - rhs);
    }
    let grid_ok = grid_max_excess <= 1e-9 * m.max(1.0);

    let biases = exec::map_range(mode, probes.len(), |k| {
        let mut rng = stream_rng(opts.seed, "gdci-probe", k as u64);
        let x = &probes[k];
        let bias = deflated_bias(obj, op, x, opts.inner_samples, &mut rng);
        let g = norm_sq(&obj.gradient(x)).sqrt();
        let ratio = if bias == 0.0 {
            0.0
        } else if g > 0.0 {
            bias / g
        } else {
            f64::INFINITY
        };
        (bias, ratio)
    });
    let b_noise = biases.iter().map(|b| b.0).fold(0.0, f64::max);
    let theta = biases.iter().map(|b| b.1).fold(0.0, f64::max);

    let x_star = obj.minimizer().to_vec();
    Ok(Constants {
        l_max: l.iter().cloned().fold(0.0, f64::max),
        l_min: l.iter().cloned().fold(f64::INFINITY, f64::min),
        mu,
        hessian_max,
        x_star_norm_sq: norm_sq(&x_star),
        f_star: obj.min_value(),
        x_star,
        radius: r,
        q,
        m,
        m_f: mf,
        grid_points: opts.grid_points,
        grid_max_excess,
        grid_ok,
        b_noise,
        theta,
        inner_samples: opts.inner_samples,
    })
}

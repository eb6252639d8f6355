use serde::{Deserialize, Serialize};

use super::{
    check_unbiasedness, check_variance, estimate_constants, gdci_runs, mean_grad_norm_sq,
    theorem_bound_rhs, corollary_bound_rhs, CompressOp, ConstantOptions, Constants, LeastSquares,
    Objective, TheoremParams, UnbiasednessReport, VarianceReport,
};
use crate::error::{IstError, Result};
use crate::exec::{self, ExecMode};
use crate::linalg::norm_sq;
use crate::rng::{derive_seed, stream_rng};

/// Keep probabilities at which the operator moments are checked.
pub const PROPERTY_XIS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

pub const Q_CAVEAT: &str = "least squares is Q-Lipschitz only on bounded sets; Q is measured on \
the origin-centred ball of radius R that contains every iterate and compressed iterate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub dim: usize,
    pub components: usize,
    pub noise: f64,
    pub instance_seed: u64,
    pub seed: u64,
    /// Keep probability; `None` picks `ω = omega_fraction · μ²/(10 L_max²)`.
    pub xi: Option<f64>,
    pub omega_fraction: f64,
    pub iterations: usize,
    pub runs: usize,
    pub check_samples: u64,
    pub lemma2_samples: u64,
    pub lemma2_probes: usize,
    pub inner_samples: usize,
    pub grid_points: usize,
    pub m_f: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            dim: 20,
            components: 100,
            noise: 0.1,
            instance_seed: 11,
            seed: 0,
            xi: None,
            omega_fraction: 0.4,
            iterations: 5000,
            runs: 32,
            check_samples: 100_000,
            lemma2_samples: 100_000,
            lemma2_probes: 8,
            inner_samples: 2048,
            grid_points: 2000,
            m_f: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub admissible: bool,
    pub diagnostic: Option<String>,
    pub alpha: f64,
    pub rhs: Option<f64>,
    /// `min_t` of the run-averaged `‖∇f(x_t)‖²` and where it occurs.
    pub observed_min: f64,
    pub argmin: usize,
    pub passed: bool,
}

fn bound_check(
    result: Result<f64>,
    alpha: f64,
    observed: &[f64],
) -> Result<BoundCheck> {
    let (argmin, observed_min) = observed
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (t, v)| if v < best.1 { (t, v) } else { best });
    match result {
        Ok(rhs) => Ok(BoundCheck {
            admissible: true,
            diagnostic: None,
            alpha,
            rhs: Some(rhs),
            observed_min,
            argmin,
            passed: observed_min <= rhs,
        }),
        Err(IstError::Inadmissible(msg)) => Ok(BoundCheck {
            admissible: false,
            diagnostic: Some(msg),
            alpha,
            rhs: None,
            observed_min,
            argmin,
            passed: false,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Point {
    pub t: usize,
    pub mean: f64,
    pub standard_error: f64,
    /// `2ω‖x_t − x*‖² + 2ω‖x*‖²`.
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub samples: u64,
    pub points: Vec<Lemma2Point>,
    pub passed: bool,
}

/// Monte-Carlo mean of `‖M(x_t) − x_t‖²` at each probe point against
/// `2ω‖x_t − x*‖² + 2ω‖x*‖²`, with three standard errors of slack.
pub fn lemma2_probe(
    op: CompressOp,
    x_star: &[f64],
    probes: &[(usize, Vec<f64>)],
    samples: u64,
    seed: u64,
    mode: ExecMode,
) -> Result<Lemma2Report> {
    if samples < 2 {
        return Err(IstError::Config("need at least 2 samples".into()));
    }
    let omega = op.omega();
    let points = exec::map_range(mode, probes.len(), |k| {
        let (t, x) = &probes[k];
        let mut rng = stream_rng(seed, "gdci-lemma2", k as u64);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let y = op.compress(x, &mut rng);
            let d: f64 = y.iter().zip(x).map(|(y, x)| (y - x) * (y - x)).sum();
            sum += d;
            sum_sq += d * d;
        }
        let n = samples as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean).max(0.0) / n).sqrt();
        let gap: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| a - b).collect();
        let bound = 2.0 * omega * norm_sq(&gap) + 2.0 * omega * norm_sq(x_star);
        Lemma2Point {
            t: *t,
            mean,
            standard_error: se,
            bound,
            passed: mean <= bound + 3.0 * se,
        }
    });
    let passed = points.iter().all(|p| p.passed);
    Ok(Lemma2Report {
        samples,
        points,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdciReport {
    pub options: VerifyOptions,
    pub xi: f64,
    pub omega: f64,
    pub omega_cap: f64,
    pub eta: f64,
    pub f_x0: f64,
    pub constants: Constants,
    pub params: TheoremParams,
    pub theorem: BoundCheck,
    pub corollary: BoundCheck,
    /// Operator moments at each of `PROPERTY_XIS`, evaluated at `x*`.
    pub unbiasedness: Vec<UnbiasednessReport>,
    pub variance: Vec<VarianceReport>,
    pub lemma2: Lemma2Report,
    pub q_caveat: String,
    pub passed: bool,
}

impl GdciReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Build the least-squares instance, refuse an inadmissible ω, run the
/// averaged recursion from `x0 = 0` with `η = 1/(2 L_max)` and check every
/// property against it.
pub fn verify(opts: &VerifyOptions, mode: ExecMode) -> Result<GdciReport> {
    if opts.runs == 0 || opts.lemma2_probes == 0 {
        return Err(IstError::Config("runs and lemma2_probes must be ≥ 1".into()));
    }
    let obj = LeastSquares::conditioned(opts.dim, opts.components, opts.noise, opts.instance_seed)?;
    let l_max = obj.l_max();
    let (mu, _) = obj.hessian_spectrum();
    let omega_cap = mu * mu / (10.0 * l_max * l_max);
    let op = match opts.xi {
        Some(xi) => CompressOp::new(xi)?,
        None => {
            if !(opts.omega_fraction >= 0.0 && opts.omega_fraction < 1.0) {
                return Err(IstError::Config(format!(
                    "omega_fraction {} must lie in [0, 1)",
                    opts.omega_fraction
                )));
            }
            CompressOp::from_omega(opts.omega_fraction * omega_cap)?
        }
    };
    let omega = op.omega();
    if omega >= omega_cap {
        return Err(IstError::Inadmissible(format!(
            "ξ = {} gives ω = {omega:.6e}, not below μ²/(10 L_max²) = {omega_cap:.6e}; \
             the main bound does not apply (need ξ > {:.8})",
            op.xi(),
            1.0 / (1.0 + omega_cap)
        )));
    }

    let eta = 1.0 / (2.0 * l_max);
    let x0 = vec![0.0; opts.dim];
    let traces = gdci_runs(&obj, op, eta, opts.iterations, opts.seed, &x0, opts.runs, mode)?;
    let mean_grad = mean_grad_norm_sq(&traces)?;
    let radius = traces.iter().map(|t| t.max_norm()).fold(0.0, f64::max);

    let probe_count = opts.lemma2_probes.min(opts.iterations + 1);
    let probes: Vec<(usize, Vec<f64>)> = (0..probe_count)
        .map(|k| {
            let t = if probe_count == 1 { 0 } else { k * opts.iterations / (probe_count - 1) };
            (t, traces[0].x[t].clone())
        })
        .collect();
    let probe_points: Vec<Vec<f64>> = probes.iter().map(|p| p.1.clone()).collect();

    let copts = ConstantOptions {
        radius,
        m_f: opts.m_f,
        grid_points: opts.grid_points,
        inner_samples: opts.inner_samples,
        seed: opts.seed,
    };
    let constants = estimate_constants(&obj, op, &probe_points, &copts, mode)?;
    let params = constants.params(omega);
    let f_x0 = obj.value(&x0);

    let theorem = bound_check(
        theorem_bound_rhs(&params, f_x0, constants.f_star, opts.iterations),
        params.alpha(),
        &mean_grad,
    )?;
    if !theorem.admissible {
        return Err(IstError::Inadmissible(
            theorem.diagnostic.unwrap_or_default(),
        ));
    }
    let corollary = bound_check(
        corollary_bound_rhs(&params, f_x0, constants.f_star, opts.iterations),
        params.alpha_corollary(),
        &mean_grad,
    )?;

    let mut unbiasedness = Vec::with_capacity(PROPERTY_XIS.len());
    let mut variance = Vec::with_capacity(PROPERTY_XIS.len());
    for (k, xi) in PROPERTY_XIS.into_iter().enumerate() {
        let check = CompressOp::new(xi)?;
        let x = &constants.x_star;
        let seed = derive_seed(opts.seed, "property", k as u64);
        unbiasedness.push(check_unbiasedness(check, x, opts.check_samples, seed, mode)?);
        variance.push(check_variance(check, x, opts.check_samples, seed, mode)?);
    }
    let lemma2 = lemma2_probe(op, &constants.x_star, &probes, opts.lemma2_samples, opts.seed, mode)?;

    let passed = theorem.passed
        && (corollary.passed || !corollary.admissible)
        && constants.grid_ok
        && unbiasedness.iter().all(|u| u.passed)
        && variance.iter().all(|v| v.passed)
        && lemma2.passed;
    Ok(GdciReport {
        options: opts.clone(),
        xi: op.xi(),
        omega,
        omega_cap,
        eta,
        f_x0,
        constants,
        params,
        theorem,
        corollary,
        unbiasedness,
        variance,
        lemma2,
        q_caveat: Q_CAVEAT.to_string(),
        passed,
    })
}

use serde::{Deserialize, Serialize};

use crate::error::{IstError, Result};

/// Constants entering the convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub l_max: f64,
    /// Error-bound constant: `‖∇f(x)‖ ≥ μ ‖x − x*‖`.
    pub mu: f64,
    pub m: f64,
    pub m_f: f64,
    pub q: f64,
    pub b_noise: f64,
    pub theta: f64,
    pub omega: f64,
    /// `‖x*‖²`.
    pub x_star_norm_sq: f64,
}

impl TheoremParams {
    /// `α = (1/(2L))(1 − M_f/2) − 5ωL/(2μ²)`.
    pub fn alpha(&self) -> f64 {
        (1.0 - self.m_f / 2.0) / (2.0 * self.l_max)
            - 5.0 * self.omega * self.l_max / (2.0 * self.mu * self.mu)
    }

    /// `α' = (1/(2L))(1/2 − θ − M_f/2) − 5Lω/(2μ²)`.
    pub fn alpha_corollary(&self) -> f64 {
        self.corollary_margin() / (2.0 * self.l_max)
            - 5.0 * self.omega * self.l_max / (2.0 * self.mu * self.mu)
    }

    fn corollary_margin(&self) -> f64 {
        0.5 - self.theta - self.m_f / 2.0
    }

    /// Largest admissible ω for the main bound: `μ² / (10 L²)`.
    pub fn omega_cap(&self) -> f64 {
        self.mu * self.mu / (10.0 * self.l_max * self.l_max)
    }

    /// ω below which `α' > 0`: `(1/2 − θ − M_f/2) μ² / (5 L²)`.
    pub fn omega_cap_corollary(&self) -> f64 {
        self.corollary_margin() * self.mu * self.mu / (5.0 * self.l_max * self.l_max)
    }

    fn check_common(&self) -> Result<()> {
        let positive = [("L_max", self.l_max), ("μ", self.mu)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IstError::Inadmissible(format!("{name} = {v} must be > 0")));
            }
        }
        let nonneg = [
            ("M", self.m),
            ("M_f", self.m_f),
            ("Q", self.q),
            ("B", self.b_noise),
            ("ω", self.omega),
            ("‖x*‖²", self.x_star_norm_sq),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(IstError::Inadmissible(format!("{name} = {v} must be ≥ 0")));
            }
        }
        if self.m_f >= 1.0 {
            return Err(IstError::Inadmissible(format!("M_f = {} must be < 1", self.m_f)));
        }
        Ok(())
    }

    pub fn check_theorem(&self) -> Result<()> {
        self.check_common()?;
        if self.omega >= self.omega_cap() {
            return Err(IstError::Inadmissible(format!(
                "ω = {:.6e} is not below μ²/(10 L_max²) = {:.6e}",
                self.omega,
                self.omega_cap()
            )));
        }
        let alpha = self.alpha();
        if alpha <= 0.0 {
            return Err(IstError::Inadmissible(format!("α = {alpha:.6e} is not positive")));
        }
        Ok(())
    }

    pub fn check_corollary(&self) -> Result<()> {
        self.check_common()?;
        if !(0.0..1.0).contains(&self.theta) {
            return Err(IstError::Inadmissible(format!("θ = {} is outside [0, 1)", self.theta)));
        }
        if self.corollary_margin() <= 0.0 {
            return Err(IstError::Inadmissible(format!(
                "1/2 − θ − M_f/2 = {:.6e} is not positive",
                self.corollary_margin()
            )));
        }
        let alpha = self.alpha_corollary();
        if alpha <= 0.0 {
            return Err(IstError::Inadmissible(format!(
                "ω = {:.6e} is not below {:.6e} (α' = {alpha:.6e})",
                self.omega,
                self.omega_cap_corollary()
            )));
        }
        Ok(())
    }
}

fn check_gap(f_x0: f64, f_star: f64) -> Result<f64> {
    let gap = f_x0 - f_star;
    if !(gap.is_finite() && gap >= 0.0) {
        return Err(IstError::Inadmissible(format!("f(x0) − f* = {gap} must be ≥ 0")));
    }
    Ok(gap)
}

/// Right-hand side of the main bound on `min_t E‖∇f(x_t)‖²`:
/// `(f(x0) − f*)/(α(T+1)) + (BQ/(2L) + 5Lω‖x*‖²/2 + M/(4L))/α`.
pub fn theorem_bound_rhs(params: &TheoremParams, f_x0: f64, f_star: f64, iterations: usize) -> Result<f64> {
    params.check_theorem()?;
    let gap = check_gap(f_x0, f_star)?;
    let p = params;
    let alpha = p.alpha();
    let floor = p.b_noise * p.q / (2.0 * p.l_max)
        + 5.0 * p.l_max * p.omega * p.x_star_norm_sq / 2.0
        + p.m / (4.0 * p.l_max);
    Ok(gap / (alpha * (iterations as f64 + 1.0)) + floor / alpha)
}

/// The same bound under the norm condition `‖ε_t‖ ≤ θ‖∇f(x_t)‖`, with `α'`
/// in place of `α` and no `BQ` term.
pub fn corollary_bound_rhs(params: &TheoremParams, f_x0: f64, f_star: f64, iterations: usize) -> Result<f64> {
    params.check_corollary()?;
    let gap = check_gap(f_x0, f_star)?;
    let p = params;
    let alpha = p.alpha_corollary();
    let floor = 5.0 * p.l_max * p.omega * p.x_star_norm_sq / 2.0 + p.m / (4.0 * p.l_max);
    Ok(gap / (alpha * (iterations as f64 + 1.0)) + floor / alpha)
}

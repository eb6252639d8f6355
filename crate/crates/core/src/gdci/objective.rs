use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{IstError, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::rng_from_seed;

/// Average of `components()` smooth functions `f = (1/n) Σ f_i`.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn components(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn component_gradient(&self, i: usize, x: &[f64]) -> Vec<f64>;
    /// Smoothness constant `L_i` of each component.
    fn smoothness(&self) -> Vec<f64>;
    fn minimizer(&self) -> &[f64];

    fn l_max(&self) -> f64 {
        self.smoothness().into_iter().fold(0.0, f64::max)
    }

    fn min_value(&self) -> f64 {
        self.value(self.minimizer())
    }
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn symmetric_eigen_range(h: &DMatrix<f64>) -> (f64, f64) {
    let eig = h.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Least squares `f(x) = (1/n) Σ ½(a_iᵀx − b_i)²` with a full-rank design.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    a: Matrix,
    b: Vec<f64>,
    hessian: DMatrix<f64>,
    /// `(1/n) Aᵀb`, so that `∇f(x) = Hx − g0`.
    g0: DVector<f64>,
    x_star: Vec<f64>,
}

impl LeastSquares {
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        let (n, p) = a.shape();
        if n == 0 || p == 0 || b.len() != n {
            return Err(IstError::Dimension(format!(
                "design {n}×{p} with {} targets",
                b.len()
            )));
        }
        let am = to_dmatrix(&a);
        let hessian = am.transpose() * &am / n as f64;
        let g0 = am.transpose() * DVector::from_column_slice(&b) / n as f64;
        let (lo, hi) = symmetric_eigen_range(&hessian);
        if !(lo > hi * 1e-12 && lo > 0.0) {
            return Err(IstError::RankDeficient);
        }
        let chol = hessian.clone().cholesky().ok_or(IstError::RankDeficient)?;
        let x_star = chol.solve(&g0).as_slice().to_vec();
        Ok(Self {
            a,
            b,
            hessian,
            g0,
            x_star,
        })
    }

    /// Seeded instance whose Hessian is exactly the identity: `A = √n·U` with
    /// `U` an `n×p` matrix of orthonormal columns, `b = A x₀ + noise·ε`.
    pub fn conditioned(p: usize, n: usize, noise: f64, seed: u64) -> Result<Self> {
        if n < p {
            return Err(IstError::RankDeficient);
        }
        let mut rng = rng_from_seed(seed);
        let g = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let scale = (n as f64).sqrt();
        let a = Matrix::from_fn(n, p, |r, c| scale * q[(r, c)]);
        let x0: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b = (0..n)
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                dot(a.row(r), &x0) + noise * e
            })
            .collect();
        Self::new(a, b)
    }

    pub fn design(&self) -> &Matrix {
        &self.a
    }

    pub fn targets(&self) -> &[f64] {
        &self.b
    }

    /// `H = (1/n) AᵀA`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.g0
    }

    /// Smallest and largest eigenvalue of the Hessian.
    pub fn hessian_spectrum(&self) -> (f64, f64) {
        symmetric_eigen_range(&self.hessian)
    }

    fn residual(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.a.row(i), x) - self.b[i]
    }
}

impl Objective for LeastSquares {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn components(&self) -> usize {
        self.a.rows()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.a.rows();
        (0..n).map(|i| 0.5 * self.residual(i, x).powi(2)).sum::<f64>() / n as f64
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let g = &self.hessian * DVector::from_column_slice(x) - &self.g0;
        g.as_slice().to_vec()
    }

    fn component_gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let r = self.residual(i, x);
        self.a.row(i).iter().map(|a| a * r).collect()
    }

    fn smoothness(&self) -> Vec<f64> {
        (0..self.a.rows())
            .map(|i| crate::linalg::norm_sq(self.a.row(i)))
            .collect()
    }

    fn minimizer(&self) -> &[f64] {
        &self.x_star
    }
}

/// Single-component quadratic `f(x) = ½ (x − c)ᵀ H (x − c)`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    hessian: DMatrix<f64>,
    center: Vec<f64>,
    l: f64,
}

impl Quadratic {
    pub fn new(hessian: Matrix, center: Vec<f64>) -> Result<Self> {
        let (r, c) = hessian.shape();
        if r != c || r != center.len() {
            return Err(IstError::Dimension(format!(
                "Hessian {r}×{c} with center of length {}",
                center.len()
            )));
        }
        let h = to_dmatrix(&hessian);
        if (&h - h.transpose()).amax() > 0.0 {
            return Err(IstError::Config("Hessian must be symmetric".into()));
        }
        let (lo, hi) = symmetric_eigen_range(&h);
        if lo <= 0.0 {
            return Err(IstError::RankDeficient);
        }
        Ok(Self {
            hessian: h,
            center,
            l: hi,
        })
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn components(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, c)| a - c));
        0.5 * d.dot(&(&self.hessian * &d))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, c)| a - c));
        (&self.hessian * d).as_slice().to_vec()
    }

    fn component_gradient(&self, _i: usize, x: &[f64]) -> Vec<f64> {
        self.gradient(x)
    }

    fn smoothness(&self) -> Vec<f64> {
        vec![self.l]
    }

    fn minimizer(&self) -> &[f64] {
        &self.center
    }
}

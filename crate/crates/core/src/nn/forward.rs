use super::standardizer::LayerStats;
use super::Model;
use crate::error::{IstError, Result};
use crate::linalg::{dot, Matrix};
use crate::mask::MaskPlan;

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    input: Matrix,
    /// `z^l = W^l f^{l-1} + b^l` for `l = 1..=t`.
    pre: Vec<Matrix>,
    /// Standardized `(z^l − μ)/σ` for hidden layers.
    normalized: Vec<Matrix>,
    /// `f^l` for hidden layers.
    post: Vec<Matrix>,
    stats: Vec<LayerStats>,
}

impl ActivationCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// Pre-activation of layer `l` in `1..=t`.
    pub fn pre_activation(&self, l: usize) -> &Matrix {
        &self.pre[l - 1]
    }

    /// Standardized pre-activation of hidden layer `l`.
    pub fn normalized(&self, l: usize) -> &Matrix {
        &self.normalized[l - 1]
    }

    /// `f^l`; `l = 0` is the input batch.
    pub fn post_activation(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }

    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }

    /// μ, σ used by each hidden layer.
    pub fn stats(&self) -> &[LayerStats] {
        &self.stats
    }
}

/// `x · Wᵀ + b`, one dot product per entry.
pub(crate) fn affine(x: &Matrix, weights: &Matrix, bias: &[f64]) -> Matrix {
    let mut z = Matrix::zeros(x.rows(), weights.rows());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let out = z.row_mut(r);
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(weights.row(j), xr) + bias[j];
        }
    }
    z
}

impl Model {
    pub fn forward(&self, batch: &Matrix) -> Result<ActivationCache> {
        let dims = self.dims();
        if batch.cols() != dims.input() {
            return Err(IstError::Dimension(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                dims.input()
            )));
        }
        let t = dims.depth();
        let act = self.activation();
        let mut pre = Vec::with_capacity(t);
        let mut normalized = Vec::with_capacity(t - 1);
        let mut post = Vec::with_capacity(t - 1);
        let mut stats = Vec::with_capacity(t - 1);
        for l in 1..=t {
            let layer = self.layer(l);
            let prev = if l == 1 { batch } else { &post[l - 2] };
            let z = affine(prev, &layer.weights, &layer.bias);
            if l < t {
                let st = self.standardizer(l).stats_for(&z);
                let mut zhat = z.clone();
                for r in 0..zhat.rows() {
                    for ((v, m), s) in zhat.row_mut(r).iter_mut().zip(&st.mean).zip(&st.std) {
                        *v = (*v - m) / s;
                    }
                }
                let mut a = zhat.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
                normalized.push(zhat);
                post.push(a);
                stats.push(st);
            }
            pre.push(z);
        }
        Ok(ActivationCache {
            input: batch.clone(),
            pre,
            normalized,
            post,
            stats,
        })
    }

    /// Site-summed masked estimate of every hidden pre-activation.
    ///
    /// For hidden layer `l`, entry `j` of row `r` is
    /// `c · Σ_s m^l_{s,j} Σ_i W^l_{j,i} m^{l-1}_{s,i} f^{l-1}_i + b^l_j`,
    /// with `f^{l-1}` the exact activations of a plain forward pass. Exactly
    /// one site owns neuron `j`, so the outer sum selects that site's term.
    /// The correction `c` is the reciprocal of the probability that a fixed
    /// `(i, j)` pair is co-located: `n` when layer `l-1` is masked, `1` for the
    /// always-present input layer. With `n = 1` this reproduces the plain
    /// pre-activations bit for bit.
    pub fn masked_forward_unbiased(&self, batch: &Matrix, plan: &MaskPlan) -> Result<Vec<Matrix>> {
        plan.check_dims(self.dims())?;
        let cache = self.forward(batch)?;
        let n = plan.n_sites();
        let mut out = Vec::with_capacity(self.dims().depth() - 1);
        for l in self.dims().hidden_layers() {
            let layer = self.layer(l);
            let prev = cache.post_activation(l - 1);
            let owner = plan.assignment(l)?;
            let prev_owner = if l == 1 { None } else { Some(plan.assignment(l - 1)?) };
            let scale = if prev_owner.is_some() { n as f64 } else { 1.0 };
            let mut est = Matrix::zeros(batch.rows(), layer.weights.rows());
            for r in 0..batch.rows() {
                let masked = site_inputs(prev.row(r), prev_owner, n);
                let row = est.row_mut(r);
                for (j, o) in row.iter_mut().enumerate() {
                    let acc = dot(layer.weights.row(j), &masked[owner[j]]);
                    *o = scale * acc + layer.bias[j];
                }
            }
            out.push(est);
        }
        Ok(out)
    }

    /// One site's unbiased estimate of `W^l f^{l-1}` (no bias):
    /// `n^k · m^l_s ⊙ (W^l (m^{l-1}_s ⊙ f^{l-1}))`, where `k = 2` when both
    /// layers are masked (each pair co-locates on `s` with probability `1/n²`)
    /// and `k = 1` for the first hidden layer.
    pub fn site_estimate(
        &self,
        batch: &Matrix,
        plan: &MaskPlan,
        layer_index: usize,
        site: usize,
    ) -> Result<Matrix> {
        plan.check_dims(self.dims())?;
        if !self.dims().hidden_layers().contains(&layer_index) {
            return Err(IstError::OutOfRange(format!("hidden layer {layer_index}")));
        }
        let n = plan.n_sites();
        if site >= n {
            return Err(IstError::OutOfRange(format!("site {site} of {n}")));
        }
        let cache = self.forward(batch)?;
        let l = layer_index;
        let layer = self.layer(l);
        let prev = cache.post_activation(l - 1);
        let owner = plan.assignment(l)?;
        let prev_owner = if l == 1 { None } else { Some(plan.assignment(l - 1)?) };
        let k = if prev_owner.is_some() { 2 } else { 1 };
        let scale = (n as f64).powi(k);
        let mut est = Matrix::zeros(batch.rows(), layer.weights.rows());
        for r in 0..batch.rows() {
            let masked = site_inputs(prev.row(r), prev_owner, n);
            for (j, o) in est.row_mut(r).iter_mut().enumerate() {
                if owner[j] == site {
                    *o = scale * dot(layer.weights.row(j), &masked[site]);
                }
            }
        }
        Ok(est)
    }
}

/// `m^{l-1}_s ⊙ f` for every site; an unmasked layer is shared by all sites.
fn site_inputs(f: &[f64], owner: Option<&[usize]>, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|s| match owner {
            None => f.to_vec(),
            Some(owner) => f
                .iter()
                .zip(owner)
                .map(|(&v, &o)| if o == s { v } else { 0.0 })
                .collect(),
        })
        .collect()
}

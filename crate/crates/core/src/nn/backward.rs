use super::{loss_gradient, Loss, Model, Targets};
use crate::error::{IstError, Result};
use crate::linalg::Matrix;

use super::forward::ActivationCache;

/// Gradients with the same shapes as a model's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            weights: model
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            bias: model.layers().iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub(crate) fn check_shapes(&self, model: &Model) -> Result<()> {
        let ok = self.weights.len() == model.layers().len()
            && self.bias.len() == model.layers().len()
            && model
                .layers()
                .iter()
                .zip(self.weights.iter().zip(&self.bias))
                .all(|(l, (w, b))| w.shape() == l.weights.shape() && b.len() == l.bias.len());
        if ok {
            Ok(())
        } else {
            Err(IstError::Dimension("gradient shapes do not match model".into()))
        }
    }

    /// Elementwise mean, accumulated in slice order.
    pub fn mean(all: &[Gradients]) -> Result<Gradients> {
        let first = all
            .first()
            .ok_or_else(|| IstError::Empty("gradient list".into()))?;
        let mut acc = first.clone();
        for g in &all[1..] {
            if g.weights.len() != acc.weights.len() {
                return Err(IstError::Dimension("gradient layer count".into()));
            }
            for (a, b) in acc.weights.iter_mut().zip(&g.weights) {
                if a.shape() != b.shape() {
                    return Err(IstError::Dimension("gradient shapes differ".into()));
                }
                a.as_mut_slice()
                    .iter_mut()
                    .zip(b.as_slice())
                    .for_each(|(x, y)| *x += y);
            }
            for (a, b) in acc.bias.iter_mut().zip(&g.bias) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        let n = all.len() as f64;
        for w in &mut acc.weights {
            w.as_mut_slice().iter_mut().for_each(|x| *x /= n);
        }
        for b in &mut acc.bias {
            b.iter_mut().for_each(|x| *x /= n);
        }
        Ok(acc)
    }

    /// Same layout as [`Model::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

impl Model {
    /// Gradients of the mean batch loss, backpropagated through the
    /// activations and the standardizers (batch-stat standardizers
    /// contribute their μ, σ dependence; frozen ones are a fixed affine map).
    pub fn backward(
        &self,
        cache: &ActivationCache,
        targets: &Targets,
        loss: Loss,
    ) -> Result<Gradients> {
        let t = self.dims().depth();
        if cache.input().cols() != self.dims().input()
            || cache.logits().cols() != self.dims().output()
            || cache.stats().len() != t - 1
        {
            return Err(IstError::Dimension("cache does not belong to this model".into()));
        }
        let act = self.activation();
        let mut grads = Gradients::zeros_like(self);
        let mut dz = loss_gradient(cache.logits(), targets, loss)?;
        let batch = cache.batch_size();
        for l in (1..=t).rev() {
            let prev = cache.post_activation(l - 1);
            let gw = &mut grads.weights[l - 1];
            let gb = &mut grads.bias[l - 1];
            for r in 0..batch {
                let dzr = dz.row(r);
                let pr = prev.row(r);
                for (j, &d) in dzr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    for (g, p) in gw.row_mut(j).iter_mut().zip(pr) {
                        *g += d * p;
                    }
                }
            }
            if l == 1 {
                break;
            }
            let weights = &self.layer(l).weights;
            let width = weights.cols();
            let zhat = cache.normalized(l - 1);
            let a = cache.post_activation(l - 1);
            let mut g = Matrix::zeros(batch, width);
            for r in 0..batch {
                let out = g.row_mut(r);
                for (j, &d) in dz.row(r).iter().enumerate() {
                    for (o, w) in out.iter_mut().zip(weights.row(j)) {
                        *o += d * w;
                    }
                }
                for ((o, &x), &y) in out.iter_mut().zip(zhat.row(r)).zip(a.row(r)) {
                    *o *= act.derivative(x, y);
                }
            }
            let stats = &cache.stats()[l - 2];
            let mut next = Matrix::zeros(batch, width);
            let bf = batch as f64;
            for j in 0..width {
                let sigma = stats.std[j];
                if !stats.from_batch {
                    for r in 0..batch {
                        next.set(r, j, g.get(r, j) / sigma);
                    }
                    continue;
                }
                let mean_g = (0..batch).map(|r| g.get(r, j)).sum::<f64>() / bf;
                let mean_gx = if stats.clamped[j] {
                    0.0
                } else {
                    (0..batch).map(|r| g.get(r, j) * zhat.get(r, j)).sum::<f64>() / bf
                };
                for r in 0..batch {
                    let v = (g.get(r, j) - mean_g - zhat.get(r, j) * mean_gx) / sigma;
                    next.set(r, j, v);
                }
            }
            dz = next;
        }
        Ok(grads)
    }
}

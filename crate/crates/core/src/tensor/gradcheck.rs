//! Central finite-difference gradient checking.
//!
//! The numeric side evaluates the forward function only (under `no_grad`),
//! so it is independent of every backward rule it verifies.

use super::{backward, no_grad, Tensor};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Per input: `max |analytic - numeric| / max(max |numeric|, 1e-12)`.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Numeric gradient of a scalar function of several real tensors.
pub fn numeric_gradient(f: &dyn Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], step: f64) -> Result<Vec<Vec<f64>>> {
    no_grad(|| {
        let base: Vec<Tensor> = inputs.iter().map(|t| t.detach()).collect();
        let mut out = Vec::with_capacity(inputs.len());
        for (k, x) in base.iter().enumerate() {
            let mut g = vec![0.0; x.data().len()];
            for (i, gi) in g.iter_mut().enumerate() {
                let eval = |delta: f64| -> Result<f64> {
                    let mut data = x.to_vec();
                    data[i] += delta;
                    let mut args = base.clone();
                    args[k] = if x.is_complex() {
                        Tensor::from_interleaved(data, x.shape())?
                    } else {
                        Tensor::from_vec(data, x.shape())?
                    };
                    Ok(f(&args)?.item())
                };
                *gi = (eval(step)? - eval(-step)?) / (2.0 * step);
            }
            out.push(g);
        }
        Ok(out)
    })
}

/// Compares reverse-mode gradients of `f` at `inputs` with central differences.
pub fn check(f: &dyn Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], step: f64) -> Result<GradCheck> {
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().into_leaf()).collect();
    let loss = f(&leaves)?;
    let analytic = backward(&loss, &leaves, false)?.grads;
    let numeric = numeric_gradient(f, inputs, step)?;
    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let scale = n.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let diff = a.data().iter().zip(n).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            diff / scale
        })
        .collect();
    Ok(GradCheck {
        rel_errors,
        analytic,
        numeric,
    })
}

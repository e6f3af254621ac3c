//! Conditional Wasserstein critic and its losses.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{graph_mix, Adjacency};
use crate::nn::{Mlp, ParamStore};
use crate::predictor::EncoderDecoder;
use crate::tensor::{grad, Tensor};

/// Floor applied to `1 - y_fake` before the logarithm.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Critic {
    pub core: EncoderDecoder,
    pub head: Mlp,
    pub d_c: usize,
}

/// History and covariates the critic is conditioned on.
#[derive(Debug, Clone, Copy)]
pub struct Condition<'a> {
    /// `(.., N, T, 1)`.
    pub x_hist: &'a Tensor,
    /// `(.., N, T+tau, d_c)`.
    pub v: &'a Tensor,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_c: usize, d_p: usize, rng: &mut R) -> Self {
        Self {
            core: EncoderDecoder::new(store, name, 1 + d_c, 1 + d_c, d_p, rng),
            head: Mlp::new(store, &format!("{name}.head"), d_p, d_p, 1, rng),
            d_c,
        }
    }

    /// One unbounded score per batch item: shape `lead` of `x_future: (lead.., N, tau, 1)`.
    pub fn score(&self, store: &ParamStore, x_future: &Tensor, cond: Condition, adj: &Adjacency) -> Result<Tensor> {
        let r = x_future.rank();
        if r < 3 || cond.x_hist.rank() != r || cond.v.rank() != r {
            return Err(Error::shape("critic_score", x_future.shape(), cond.x_hist.shape()));
        }
        let axis = r - 2;
        let t = cond.x_hist.dim(axis);
        let tau = x_future.dim(axis);
        if cond.v.dim(axis) != t + tau || cond.v.dim(r - 1) != self.d_c {
            return Err(Error::shape("critic_score", cond.v.shape(), x_future.shape()));
        }
        let enc_x = Tensor::concat(&[&graph_mix(cond.x_hist, adj)?, &cond.v.slice(axis, 0, t)?], r - 1)?;
        let dec_x = Tensor::concat(&[&graph_mix(x_future, adj)?, &cond.v.slice(axis, t, tau)?], r - 1)?;
        let dec = self.core.forward(store, &enc_x, &dec_x)?;
        // mean over series and time
        let pooled = dec.mean_axis(r - 3)?.mean_axis(r - 2)?;
        let lead = &x_future.shape()[..r - 3];
        self.head.forward(store, &pooled)?.reshape(lead)
    }
}

/// `mean_b (|grad_{x_bar} f(x_bar)_b| - 1)^2` at `x_bar = eps x_real + (1 - eps) x_fake`,
/// one `eps ~ U(0, 1)` per batch item (leading axis). The result stays differentiable
/// with respect to whatever `critic` closes over.
pub fn gradient_penalty<R: Rng + ?Sized>(critic: &dyn Fn(&Tensor) -> Result<Tensor>, x_real: &Tensor, x_fake: &Tensor, rng: &mut R) -> Result<Tensor> {
    if x_real.shape() != x_fake.shape() || x_real.rank() == 0 {
        return Err(Error::shape("gradient_penalty", x_real.shape(), x_fake.shape()));
    }
    let batch = x_real.dim(0);
    let mut eps_shape = vec![1; x_real.rank()];
    eps_shape[0] = batch;
    let eps = Tensor::rand_uniform(&eps_shape, 0.0, 1.0, rng);
    let one_minus = eps.neg().add_scalar(1.0);
    let x_bar = eps
        .mul(&x_real.detach())?
        .add(&one_minus.mul(&x_fake.detach())?)?
        .detach()
        .into_leaf();
    let scores = critic(&x_bar)?;
    let g = grad(&scores.sum()?, &[x_bar], true)?.remove(0);
    let norms = g.norm_from(1)?;
    norms.add_scalar(-1.0).square()?.mean()
}

/// `y_fake - y_real + alpha gp`.
pub fn discriminator_loss(y_real: &Tensor, y_fake: &Tensor, gp: &Tensor, alpha: f64) -> Result<Tensor> {
    y_fake.sub(y_real)?.add(&gp.scale(alpha))
}

/// Generator-side adversarial term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvTerm {
    /// `gamma log(max(1 - y, LOG_EPS))`.
    Log,
    /// `-gamma y`.
    NegativeScore,
}

/// Adversarial term averaged over the batch of fake scores.
pub fn adversarial_term(y_fake: &Tensor, gamma: f64, kind: AdvTerm) -> Result<Tensor> {
    match kind {
        AdvTerm::Log => y_fake.neg().add_scalar(1.0).clamp_min(LOG_EPS).ln().mean().map(|m| m.scale(gamma)),
        AdvTerm::NegativeScore => y_fake.mean().map(|m| m.scale(-gamma)),
    }
}

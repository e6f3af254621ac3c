//! Learned series adjacency and normalized graph propagation.
//!
//! Adjacency tensors carry the leading batch axes of the embeddings they were
//! learned from: `(.., N, N)`.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
pub use crate::nn::Activation;
use crate::nn::{Gru, Linear, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GraphLearner {
    pub gru: Gru,
    pub w1: Linear,
    pub w2: Linear,
    pub d_k: usize,
    /// Self-loop weight in `[0, 1]`.
    pub beta: f64,
}

impl GraphLearner {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_l: usize, d_m: usize, d_k: usize, beta: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")));
        }
        if d_m == 0 || d_k == 0 {
            return Err(Error::Config("graph learner widths must be positive".into()));
        }
        Ok(Self {
            gru: Gru::new(store, &format!("{name}.gru"), d_l, d_m, rng),
            w1: Linear::new(store, &format!("{name}.w1"), d_m, d_k, false, rng),
            w2: Linear::new(store, &format!("{name}.w2"), d_m, d_k, false, rng),
            d_k,
            beta,
        })
    }

    /// Adjacency from history embeddings `h0` of shape `(.., N, T, d_l)`.
    pub fn learn(&self, store: &ParamStore, h0: &Tensor) -> Result<Adjacency> {
        if h0.rank() < 3 || h0.dim(h0.rank() - 2) == 0 {
            return Err(Error::invalid("learn_adjacency", format!("need (.., N, T>=1, d), got {:?}", h0.shape())));
        }
        let m = self.gru.final_state(store, h0)?;
        let q = self.w1.forward(store, &m)?;
        let k = self.w2.forward(store, &m)?;
        let scores = q.matmul(&k.transpose_last()?)?.scale(1.0 / (self.d_k as f64).sqrt());
        Adjacency::from_similarity(&scores.softmax(-1)?, self.beta)
    }
}

#[derive(Debug, Clone)]
pub struct Adjacency {
    /// Row-stochastic similarity before symmetrization.
    pub a_tilde: Tensor,
    pub a: Tensor,
    /// `D^{-1/2} A D^{-1/2}` with `D` the row sums of `A`.
    pub norm: Tensor,
    pub beta: f64,
}

impl Adjacency {
    /// `A = (1 - beta)/2 (A~ + A~^T) + beta I` and its symmetric normalization.
    pub fn from_similarity(a_tilde: &Tensor, beta: f64) -> Result<Self> {
        let r = a_tilde.rank();
        if r < 2 || a_tilde.dim(r - 1) != a_tilde.dim(r - 2) {
            return Err(Error::invalid("adjacency", format!("need square (.., N, N), got {:?}", a_tilde.shape())));
        }
        let n = a_tilde.dim(r - 1);
        let sym = a_tilde.add(&a_tilde.transpose_last()?)?.scale((1.0 - beta) / 2.0);
        let a = sym.add(&Tensor::eye(n).scale(beta))?;
        let degree = a.sum_axis(r - 1)?;
        if let Some(pos) = degree.data().iter().position(|&s| !(s > 0.0)) {
            return Err(Error::SingularDegree { row: pos % n, sum: degree.data()[pos] });
        }
        let dinv = Tensor::ones(degree.shape()).div(&degree.sqrt())?;
        let norm = a.mul(&dinv)?.mul(&dinv.transpose_last()?)?;
        Ok(Self { a_tilde: a_tilde.clone(), a, norm, beta })
    }

    pub fn identity(n: usize) -> Self {
        Self { a_tilde: Tensor::eye(n), a: Tensor::eye(n), norm: Tensor::eye(n), beta: 1.0 }
    }

    pub fn n(&self) -> usize {
        self.a.dim(self.a.rank() - 1)
    }

    /// Writes `A` of the first batch item as an `N x N` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.n();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for chunk in self.a.data()[..n * n].chunks(n) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        f.flush()?;
        Ok(())
    }
}

/// `A_norm x` along the series axis of `x: (.., N, S, c)`.
pub fn graph_mix(x: &Tensor, adj: &Adjacency) -> Result<Tensor> {
    let r = x.rank();
    if r < 3 || x.dim(r - 3) != adj.n() {
        return Err(Error::shape("graph_mix", x.shape(), adj.norm.shape()));
    }
    let lead = &x.shape()[..r - 2];
    let flat = x.reshape(&[lead, &[x.dim(r - 2) * x.dim(r - 1)]].concat())?;
    adj.norm.matmul(&flat)?.reshape(x.shape())
}

/// `layers` rounds of `x <- sigma(A_norm x)`.
pub fn gcn_propagate(x: &Tensor, adj: &Adjacency, layers: usize, sigma: Activation) -> Result<Tensor> {
    let mut h = x.clone();
    for _ in 0..layers {
        h = sigma.apply(&graph_mix(&h, adj)?);
    }
    Ok(h)
}

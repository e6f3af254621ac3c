//! Latent-space mapper and the restoration head back to data space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{gcn_propagate, graph_mix, Activation, Adjacency, GraphLearner};
use crate::mixers::Afno;
use crate::nn::{sinusoidal_pe, Linear, Mlp, ParamStore};
use crate::tensor::Tensor;

/// Token mixer used inside the mapper.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerKind {
    /// Masked AFNO.
    Afno,
    /// Pass-through, for ablation.
    Identity,
}

/// Widths and structural knobs shared by the model components.
#[derive(Debug, Clone, PartialEq)]
pub struct Dims {
    /// Mixer width.
    pub d: usize,
    /// Latent width.
    pub d_l: usize,
    /// GRU hidden width of the graph learner.
    pub d_m: usize,
    /// Graph learner projection width.
    pub d_k: usize,
    /// Encoder-decoder width.
    pub d_p: usize,
    /// Covariate channels.
    pub d_c: usize,
    /// AFNO block count.
    pub k: usize,
    /// Soft-threshold level.
    pub a: f64,
    /// GCN depth.
    pub layers: usize,
    pub beta: f64,
    pub mixer: MixerKind,
}

pub struct Latent {
    /// `(.., N, T+tau, d_l)` after graph propagation.
    pub h: Tensor,
    /// Embeddings before graph propagation.
    pub h0: Tensor,
    pub adj: Adjacency,
}

#[derive(Debug, Clone)]
pub struct Mapper {
    pub emb: Linear,
    pub afno: Afno,
    pub mlp: Mlp,
    pub graph: GraphLearner,
    pub dims: Dims,
}

/// Data error naming the first non-finite entry.
pub(crate) fn require_finite(x: &Tensor, what: &str) -> Result<()> {
    match x.data().iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(flat) => {
            let mut index = vec![0; x.rank()];
            let mut rest = flat;
            for axis in (0..x.rank()).rev() {
                index[axis] = rest % x.dim(axis);
                rest /= x.dim(axis);
            }
            Err(Error::Data(format!("{what} has a non-finite value at {index:?}")))
        }
    }
}

fn with_positions(y: Tensor, d: usize) -> Result<Tensor> {
    let len = y.dim(y.rank() - 2);
    y.add(&sinusoidal_pe(len, d))
}

impl Mapper {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: &Dims, rng: &mut R) -> Result<Self> {
        Ok(Self {
            emb: Linear::new(store, &format!("{name}.emb"), 1, dims.d, true, rng),
            afno: Afno::new(store, &format!("{name}.afno"), dims.d, dims.k, dims.a, rng)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dims.d, dims.d_l, dims.d_l, rng),
            graph: GraphLearner::new(store, &format!("{name}.graph"), dims.d_l, dims.d_m, dims.d_k, dims.beta, rng)?,
            dims: dims.clone(),
        })
    }

    /// Maps `x: (.., N, T+tau, 1)` to the latent panel. The adjacency reads steps `..t_hist` only.
    pub fn map_to_latent(&self, store: &ParamStore, x: &Tensor, t_hist: usize) -> Result<Latent> {
        require_finite(x, "mapper input")?;
        let r = x.rank();
        if r < 3 || x.dim(r - 1) != 1 {
            return Err(Error::shape("map_to_latent", x.shape(), &[0, 0, 1]));
        }
        let xe = with_positions(self.emb.forward(store, x)?, self.dims.d)?;
        let mixed = match self.dims.mixer {
            MixerKind::Afno => self.afno.forward_masked(store, &xe, t_hist)?,
            MixerKind::Identity => xe,
        };
        let h0 = self.mlp.forward(store, &mixed)?;
        let adj = self.graph.learn(store, &h0.slice(r - 2, 0, t_hist)?)?;
        let h = match self.dims.layers {
            0 => h0.clone(),
            l => graph_mix(&gcn_propagate(&h0, &adj, l - 1, Activation::Relu)?, &adj)?,
        };
        Ok(Latent { h, h0, adj })
    }
}

#[derive(Debug, Clone)]
pub struct Restorer {
    pub emb: Linear,
    pub afno: Afno,
    pub head: Mlp,
    pub d: usize,
}

impl Restorer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: &Dims, rng: &mut R) -> Result<Self> {
        Ok(Self {
            emb: Linear::new(store, &format!("{name}.emb"), dims.d_l, dims.d, true, rng),
            afno: Afno::new(store, &format!("{name}.afno"), dims.d, dims.k, dims.a, rng)?,
            head: Mlp::new(store, &format!("{name}.head"), dims.d, dims.d_l, 1, rng),
            d: dims.d,
        })
    }

    /// `(.., N, L, d_l)` -> `(.., N, L, 1)`.
    pub fn restore(&self, store: &ParamStore, h: &Tensor) -> Result<Tensor> {
        require_finite(h, "restorer input")?;
        let he = with_positions(self.emb.forward(store, h)?, self.d)?;
        let mixed = self.afno.forward(store, &he)?;
        self.head.forward(store, &mixed)
    }
}

/// Mean squared error over the whole window.
pub fn reconstruction_loss(x: &Tensor, x_tilde: &Tensor) -> Result<Tensor> {
    x.mse(x_tilde)
}

//! Parameter storage and the small layers shared by every model component.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable leaf tensors.
///
/// Tensors are immutable, so an optimizer step replaces entries via [`ParamStore::set`].
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value.detach().into_leaf());
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Replaces a value; the new tensor becomes a fresh leaf.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let old = &self.values[id.0];
        if old.shape() != value.shape() || old.dtype() != value.dtype() {
            return Err(Error::shape("param_set", old.shape(), value.shape()));
        }
        self.values[id.0] = value.detach().into_leaf();
        Ok(())
    }

    /// Stores `value` as is, keeping its graph identity, so gradients with respect
    /// to an outside leaf can flow through the model.
    pub fn bind(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let old = &self.values[id.0];
        if old.shape() != value.shape() || old.dtype() != value.dtype() {
            return Err(Error::shape("param_bind", old.shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|id| self.names[id.0].starts_with(prefix)).collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self, ids: &[ParamId]) -> Vec<Tensor> {
        ids.iter().map(|&id| self.values[id.0].clone()).collect()
    }

    /// Number of stored scalars, counting a complex entry once.
    pub fn entry_count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.values[id.0].numel()).sum()
    }
}

fn uniform_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Affine map over the last axis: `x W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), uniform_init(&[d_in, d_out], d_in, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), uniform_init(&[d_out], d_in, rng)));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = if x.rank() == 1 {
            x.reshape(&[1, x.dim(0)])?.matmul(store.get(self.w))?.reshape(&[store.get(self.w).dim(1)])?
        } else {
            x.matmul(store.get(self.w))?
        };
        match self.b {
            Some(b) => y.add(store.get(b)),
            None => Ok(y),
        }
    }
}

/// Gated recurrent unit run along the second-to-last axis.
#[derive(Debug, Clone)]
pub struct Gru {
    /// Input projections for the (update, reset, candidate) gates, concatenated: `(in, 3h)`.
    pub wx: Linear,
    /// Hidden projections, same layout: `(h, 3h)`.
    pub wh: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = Linear::new(store, &format!("{name}.x"), d_in, 3 * hidden, true, rng);
        let wh = Linear::new(store, &format!("{name}.h"), hidden, 3 * hidden, true, rng);
        Self { wx, wh, hidden }
    }

    /// Final hidden state for `x` of shape `(.., T, in)`, starting from zeros. Returns `(.., h)`.
    pub fn final_state(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let r = x.rank();
        if r < 2 || x.dim(r - 1) != self.wx.d_in {
            return Err(Error::shape("gru", x.shape(), &[self.wx.d_in]));
        }
        let steps = x.dim(r - 2);
        let lead = &x.shape()[..r - 2];
        let hs = self.hidden;
        let xp = self.wx.forward(store, x)?;
        let mut state_shape = lead.to_vec();
        state_shape.push(hs);
        let mut h = Tensor::zeros(&state_shape);
        for t in 0..steps {
            let xt = xp.slice(r - 2, t, 1)?.reshape(&[lead, &[3 * hs]].concat())?;
            let hp = self.wh.forward(store, &h)?;
            let last = r - 2;
            let z = xt.slice(last, 0, hs)?.add(&hp.slice(last, 0, hs)?)?.sigmoid();
            let rg = xt.slice(last, hs, hs)?.add(&hp.slice(last, hs, hs)?)?.sigmoid();
            let n = xt.slice(last, 2 * hs, hs)?.add(&rg.mul(&hp.slice(last, 2 * hs, hs)?)?)?.tanh();
            // h' = (1 - z) n + z h = n + z (h - n)
            h = n.add(&z.mul(&h.sub(&n)?)?)?;
        }
        Ok(h)
    }
}

/// Sinusoidal position table of shape `(len, d)`.
pub fn sinusoidal_pe(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let k = (i / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(k as f64 / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_vec(data, &[len, d]).expect("pe shape")
}

/// Single-head scaled dot-product attention with its three projections.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub d: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d: usize, rng: &mut R) -> Self {
        Self {
            wq: Linear::new(store, &format!("{name}.q"), d_in, d, false, rng),
            wk: Linear::new(store, &format!("{name}.k"), d_in, d, false, rng),
            wv: Linear::new(store, &format!("{name}.v"), d_in, d, false, rng),
            d,
        }
    }

    pub fn forward(&self, store: &ParamStore, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
        attention_block(
            q,
            k,
            v,
            store.get(self.wq.w),
            store.get(self.wk.w),
            store.get(self.wv.w),
        )
    }
}

/// `softmax(q Wq (k Wk)^T / sqrt(d)) v Wv` over the second-to-last axis.
pub fn attention_block(q: &Tensor, k: &Tensor, v: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor) -> Result<Tensor> {
    if k.rank() < 2 || v.rank() < 2 || k.dim(k.rank() - 2) != v.dim(v.rank() - 2) {
        return Err(Error::shape("attention", k.shape(), v.shape()));
    }
    let d = wq.dim(1);
    let qp = q.matmul(wq)?;
    let kp = k.matmul(wk)?;
    let vp = v.matmul(wv)?;
    let logits = qp.matmul(&kp.transpose_last()?)?.scale(1.0 / (d as f64).sqrt());
    logits.softmax(-1)?.matmul(&vp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.relu(),
        }
    }
}

/// Two affine layers with ReLU between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.0"), d_in, hidden, true, rng),
            l2: Linear::new(store, &format!("{name}.1"), hidden, d_out, true, rng),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.l2.forward(store, &self.l1.forward(store, x)?.relu())
    }
}

//! Token mixers over the `(N, T)` grid of a `(.., N, T, d)` tensor.
//!
//! Frequency-domain mixers keep complex values split into real and imaginary
//! real tensors between the transforms; only the transforms see complex tensors.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{attention_block, Activation, ParamId, ParamStore};
use crate::tensor::{memory, no_grad, Tensor};

/// Complex value held as two real tensors of equal shape.
#[derive(Debug, Clone)]
pub struct Split {
    pub re: Tensor,
    pub im: Tensor,
}

impl Split {
    pub fn from_complex(z: &Tensor) -> Result<Self> {
        Ok(Self { re: z.real()?, im: z.imag()? })
    }

    pub fn to_complex(&self) -> Result<Tensor> {
        Tensor::complex(&self.re, &self.im)
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Self> {
        Ok(Self { re: f(&self.re)?, im: f(&self.im)? })
    }

    /// Complex matrix product `self @ w`.
    pub fn matmul(&self, w: &Split) -> Result<Self> {
        let re = self.re.matmul(&w.re)?.sub(&self.im.matmul(&w.im)?)?;
        let im = self.re.matmul(&w.im)?.add(&self.im.matmul(&w.re)?)?;
        Ok(Self { re, im })
    }

    pub fn add(&self, b: &Split) -> Result<Self> {
        Ok(Self { re: self.re.add(&b.re)?, im: self.im.add(&b.im)? })
    }
}

/// Largest imaginary magnitude of a complex tensor; the part `real()` drops.
pub fn imag_residue(z: &Tensor) -> Result<f64> {
    Ok(z.imag()?.max_abs())
}

/// Collapses all axes before the last three into one.
fn flatten_lead(z: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if z.rank() < 3 {
        return Err(Error::invalid("mixer", format!("expected (.., N, T, d), got {:?}", z.shape())));
    }
    let r = z.rank();
    let lead = z.shape()[..r - 3].to_vec();
    let b: usize = lead.iter().product();
    Ok((z.reshape(&[b, z.dim(r - 3), z.dim(r - 2), z.dim(r - 1)])?, lead))
}

fn complex_init<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let normal = Tensor::randn(&[2 * n], std, rng);
    Tensor::from_interleaved(normal.to_vec(), shape).expect("complex init")
}

/// Global self-attention over all `N * T` tokens jointly.
#[derive(Debug, Clone)]
pub struct GlobalAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub d: usize,
    /// Largest token count accepted; the score matrix is quadratic in it.
    pub token_cap: usize,
}

impl GlobalAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, token_cap: usize, rng: &mut R) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        Self {
            wq: store.add(format!("{name}.wq"), Tensor::randn(&[d, d], std, rng)),
            wk: store.add(format!("{name}.wk"), Tensor::randn(&[d, d], std, rng)),
            wv: store.add(format!("{name}.wv"), Tensor::randn(&[d, d], std, rng)),
            d,
            token_cap,
        }
    }

    pub fn param_count(d: usize) -> usize {
        3 * d * d
    }

    pub fn forward(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        global_self_attention(z, store.get(self.wq), store.get(self.wk), store.get(self.wv), self.token_cap)
    }
}

pub fn global_self_attention(z: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor, token_cap: usize) -> Result<Tensor> {
    let (flat, lead) = flatten_lead(z)?;
    let (b, n, t, d) = (flat.dim(0), flat.dim(1), flat.dim(2), flat.dim(3));
    if n * t > token_cap {
        return Err(Error::ResourceGuard(format!(
            "global attention over {} tokens exceeds the cap of {token_cap}",
            n * t
        )));
    }
    let tokens = flat.reshape(&[b, n * t, d])?;
    let out = attention_block(&tokens, &tokens, &tokens, wq, wk, wv)?;
    out.reshape(&[lead.as_slice(), &[n, t, out.dim(2)]].concat())
}

/// Discrete FNO: one complex `d x d` matrix per frequency bin of a fixed grid.
#[derive(Debug, Clone)]
pub struct Fno {
    pub w: ParamId,
    pub grid: (usize, usize),
    pub d: usize,
}

impl Fno {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, n: usize, t: usize, d: usize, rng: &mut R) -> Self {
        let w = complex_init(&[n, t, d, d], 1.0 / (2.0 * d as f64).sqrt(), rng);
        Self { w: store.add(format!("{name}.w"), w), grid: (n, t), d }
    }

    pub fn param_count(n: usize, t: usize, d: usize) -> usize {
        n * t * d * d
    }

    pub fn forward(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        fno_forward(z, store.get(self.w))
    }
}

/// `idft2(W_{n,t} . dft2(z)_{n,t})` with `w` complex of shape `(N, T, d, d)`.
pub fn fno_forward(z: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (flat, lead) = flatten_lead(z)?;
    let (b, n, t, d) = (flat.dim(0), flat.dim(1), flat.dim(2), flat.dim(3));
    if w.shape() != [n, t, d, d] {
        return Err(Error::shape("fno", &[n, t, d, d], w.shape()));
    }
    let spec = Split::from_complex(&flat.dft2()?)?.map(|p| p.reshape(&[b, n, t, 1, d]))?;
    let wt = Split::from_complex(w)?.map(|p| p.transpose_last())?;
    let mixed = spec.matmul(&wt)?.map(|p| p.reshape(&[b, n, t, d]))?;
    let out = mixed.to_complex()?.idft2()?.real()?;
    out.reshape(&[lead.as_slice(), &[n, t, d]].concat())
}

/// AFNO block MLP weights: `K` diagonal blocks of size `d/K`.
#[derive(Debug, Clone)]
pub struct Afno {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub k: usize,
    pub d: usize,
    /// Soft-threshold level.
    pub a: f64,
    /// Between the two block layers; ReLU unless changed.
    pub act: Activation,
}

impl Afno {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, k: usize, a: f64, rng: &mut R) -> Result<Self> {
        check_afno_dims(d, k, a)?;
        let dk = d / k;
        let std = 1.0 / (2.0 * dk as f64).sqrt();
        Ok(Self {
            w1: store.add(format!("{name}.w1"), complex_init(&[k, dk, dk], std, rng)),
            b1: store.add(format!("{name}.b1"), complex_init(&[k, dk], 0.02, rng)),
            w2: store.add(format!("{name}.w2"), complex_init(&[k, dk, dk], std, rng)),
            b2: store.add(format!("{name}.b2"), complex_init(&[k, dk], 0.02, rng)),
            k,
            d,
            a,
            act: Activation::Relu,
        })
    }

    pub fn param_count(d: usize, k: usize) -> usize {
        let dk = d / k;
        2 * k * dk * dk + 2 * k * dk
    }

    pub fn weights<'a>(&self, store: &'a ParamStore) -> AfnoWeights<'a> {
        AfnoWeights {
            w1: store.get(self.w1),
            b1: store.get(self.b1),
            w2: store.get(self.w2),
            b2: store.get(self.b2),
            a: self.a,
            act: self.act,
        }
    }

    pub fn forward(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        afno_forward(z, &self.weights(store))
    }

    pub fn forward_masked(&self, store: &ParamStore, z: &Tensor, t_hist: usize) -> Result<Tensor> {
        masked_afno_forward(z, &self.weights(store), t_hist)
    }
}

fn check_afno_dims(d: usize, k: usize, a: f64) -> Result<()> {
    if k == 0 || d % k != 0 {
        return Err(Error::Config(format!("AFNO width {d} is not divisible by block count {k}")));
    }
    if !(a >= 0.0) {
        return Err(Error::Config(format!("soft-threshold level must be >= 0, got {a}")));
    }
    Ok(())
}

/// Borrowed AFNO weights: `w*` complex `(K, d/K, d/K)`, `b*` complex `(K, d/K)`.
#[derive(Debug, Clone, Copy)]
pub struct AfnoWeights<'a> {
    pub w1: &'a Tensor,
    pub b1: &'a Tensor,
    pub w2: &'a Tensor,
    pub b2: &'a Tensor,
    pub a: f64,
    pub act: Activation,
}

/// Per frequency token and block: `S_a(W2 act(W1 z + b1) + b2)`, the activation
/// and `S_a` acting on real and imaginary parts separately.
pub fn afno_forward(z: &Tensor, p: &AfnoWeights) -> Result<Tensor> {
    let (flat, lead) = flatten_lead(z)?;
    let (b, n, t, d) = (flat.dim(0), flat.dim(1), flat.dim(2), flat.dim(3));
    let k = p.w1.dim(0);
    check_afno_dims(d, k, p.a)?;
    let dk = d / k;
    if p.w1.shape() != [k, dk, dk] || p.w2.shape() != [k, dk, dk] {
        return Err(Error::shape("afno", &[k, dk, dk], p.w1.shape()));
    }
    let m = n * t;
    // (B, N, T, d) -> (B, K, M, dk)
    let tokens = Split::from_complex(&flat.dft2()?)?
        .map(|x| x.reshape(&[b, m, k, dk])?.permute(&[0, 2, 1, 3]))?;
    let layer = |x: &Split, w: &Tensor, bias: &Tensor| -> Result<Split> {
        let wt = Split::from_complex(w)?.map(|p| p.transpose_last())?;
        let bias = Split::from_complex(bias)?.map(|p| p.reshape(&[k, 1, dk]))?;
        x.matmul(&wt)?.add(&bias)
    };
    let hidden = layer(&tokens, p.w1, p.b1)?.map(|x| Ok(p.act.apply(x)))?;
    let out = layer(&hidden, p.w2, p.b2)?;
    let out = if p.a > 0.0 { out.map(|x| x.soft_shrink(p.a))? } else { out };
    let out = out.map(|x| x.permute(&[0, 2, 1, 3])?.reshape(&[b, n, t, d]))?;
    let y = out.to_complex()?.idft2()?.real()?;
    y.reshape(&[lead.as_slice(), &[n, t, d]].concat())
}

/// Two weight-shared AFNO passes: steps `..t_hist` see only the history,
/// later steps come from the pass over the full window.
pub fn masked_afno_forward(z: &Tensor, p: &AfnoWeights, t_hist: usize) -> Result<Tensor> {
    let r = z.rank();
    if r < 3 {
        return Err(Error::invalid("masked_afno", format!("expected (.., N, T, d), got {:?}", z.shape())));
    }
    let axis = r - 2;
    let total = z.dim(axis);
    if t_hist == 0 || t_hist > total {
        return Err(Error::invalid("masked_afno", format!("history length {t_hist} outside 1..={total}")));
    }
    if t_hist == total {
        log::warn!("masked AFNO with an empty horizon reduces to plain AFNO");
        return afno_forward(z, p);
    }
    let hist = afno_forward(&z.slice(axis, 0, t_hist)?, p)?;
    let full = afno_forward(z, p)?;
    Tensor::concat(&[&hist, &full.slice(axis, t_hist, total - t_hist)?], axis)
}

/// One row of the mixer cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub mixer: &'static str,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub params: usize,
    pub forward_ms: f64,
    pub peak_bytes: usize,
}

pub const COST_CSV_HEADER: &str = "mixer,N,T,d,params,forward_ms,peak_bytes";

impl CostRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{}",
            self.mixer, self.n, self.t, self.d, self.params, self.forward_ms, self.peak_bytes
        )
    }
}

/// Times a forward pass: minimum wall clock over `repeats` runs after one warm-up,
/// and peak tensor bytes allocated above the pre-call level.
fn measure(repeats: usize, f: &dyn Fn() -> Result<Tensor>) -> Result<(f64, usize)> {
    no_grad(|| {
        f()?;
        let mut best = f64::INFINITY;
        let mut peak = 0;
        for _ in 0..repeats.max(1) {
            let base = memory::live_bytes();
            memory::reset_peak();
            let start = Instant::now();
            let out = f()?;
            best = best.min(start.elapsed().as_secs_f64() * 1e3);
            peak = peak.max(memory::peak_bytes().saturating_sub(base));
            drop(out);
        }
        Ok((best, peak))
    })
}

/// Parameter count, forward time and peak buffer bytes for every mixer at each size.
pub fn mixer_cost_report<R: Rng + ?Sized>(sizes: &[(usize, usize, usize)], k: usize, token_cap: usize, repeats: usize, rng: &mut R) -> Result<Vec<CostRow>> {
    let mut rows = Vec::new();
    for &(n, t, d) in sizes {
        let mut store = ParamStore::new();
        let attn = GlobalAttention::new(&mut store, "attn", d, token_cap, rng);
        let fno = Fno::new(&mut store, "fno", n, t, d, rng);
        let afno = Afno::new(&mut store, "afno", d, k, 0.01, rng)?;
        let z = Tensor::randn(&[n, t, d], 1.0, rng);

        let counted = |ids: &[ParamId]| store.entry_count(ids);
        let entries = [
            ("attention", counted(&store.ids_with_prefix("attn.")), &(|| attn.forward(&store, &z)) as &dyn Fn() -> Result<Tensor>),
            ("fno", counted(&store.ids_with_prefix("fno.")), &|| fno.forward(&store, &z)),
            ("afno", counted(&store.ids_with_prefix("afno.")), &|| afno.forward(&store, &z)),
        ];
        for (mixer, params, f) in entries {
            let (forward_ms, peak_bytes) = measure(repeats, f)?;
            rows.push(CostRow { mixer, n, t, d, params, forward_ms, peak_bytes });
        }
    }
    Ok(rows)
}

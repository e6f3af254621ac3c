//! Attention encoder-decoder over the time axis, applied independently per series.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_pe, Attention, Linear, Mlp, ParamStore};
use crate::tensor::Tensor;

/// One encoder layer and one decoder layer with residual connections.
#[derive(Debug, Clone)]
pub struct EncoderDecoder {
    pub enc_in: Linear,
    pub enc_attn: Attention,
    pub enc_ff: Mlp,
    pub dec_in: Linear,
    pub dec_self: Attention,
    pub dec_cross: Attention,
    pub dec_ff: Mlp,
    pub d_p: usize,
}

impl EncoderDecoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, enc_width: usize, dec_width: usize, d_p: usize, rng: &mut R) -> Self {
        Self {
            enc_in: Linear::new(store, &format!("{name}.enc_in"), enc_width, d_p, true, rng),
            enc_attn: Attention::new(store, &format!("{name}.enc_attn"), d_p, d_p, rng),
            enc_ff: Mlp::new(store, &format!("{name}.enc_ff"), d_p, 2 * d_p, d_p, rng),
            dec_in: Linear::new(store, &format!("{name}.dec_in"), dec_width, d_p, true, rng),
            dec_self: Attention::new(store, &format!("{name}.dec_self"), d_p, d_p, rng),
            dec_cross: Attention::new(store, &format!("{name}.dec_cross"), d_p, d_p, rng),
            dec_ff: Mlp::new(store, &format!("{name}.dec_ff"), d_p, 2 * d_p, d_p, rng),
            d_p,
        }
    }

    /// `enc_x: (.., T, enc_width)`, `dec_x: (.., tau, dec_width)` -> `(.., tau, d_p)`.
    /// Decoder queries carry positions `T..T+tau`.
    pub fn forward(&self, store: &ParamStore, enc_x: &Tensor, dec_x: &Tensor) -> Result<Tensor> {
        let t = enc_x.dim(enc_x.rank() - 2);
        let tau = dec_x.dim(dec_x.rank() - 2);
        let pe = sinusoidal_pe(t + tau, self.d_p);

        let e = self.enc_in.forward(store, enc_x)?.add(&pe.slice(0, 0, t)?)?;
        let e = e.add(&self.enc_attn.forward(store, &e, &e, &e)?)?;
        let e = e.add(&self.enc_ff.forward(store, &e)?)?;

        let q = self.dec_in.forward(store, dec_x)?.add(&pe.slice(0, t, tau)?)?;
        let q = q.add(&self.dec_self.forward(store, &q, &q, &q)?)?;
        let q = q.add(&self.dec_cross.forward(store, &q, &e, &e)?)?;
        q.add(&self.dec_ff.forward(store, &q)?)
    }
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub core: EncoderDecoder,
    pub out: Linear,
    pub d_l: usize,
    pub d_c: usize,
}

impl Predictor {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_l: usize, d_c: usize, d_p: usize, rng: &mut R) -> Self {
        Self {
            core: EncoderDecoder::new(store, name, d_l + d_c, d_c, d_p, rng),
            out: Linear::new(store, &format!("{name}.out"), d_p, d_l, true, rng),
            d_l,
            d_c,
        }
    }

    /// Latent forecast `(.., N, tau, d_l)` from history `(.., N, T, d_l)` and covariates `(.., N, T+tau, d_c)`.
    pub fn predict_latent(&self, store: &ParamStore, h_hist: &Tensor, v: &Tensor) -> Result<Tensor> {
        let r = h_hist.rank();
        let axis = r - 2;
        let t = h_hist.dim(axis);
        if v.rank() != r || v.dim(axis) <= t || v.dim(r - 1) != self.d_c {
            return Err(Error::Data(format!(
                "covariates {:?} must cover history {:?} plus at least one future step with {} channels",
                v.shape(),
                h_hist.shape(),
                self.d_c
            )));
        }
        let tau = v.dim(axis) - t;
        let enc_x = Tensor::concat(&[h_hist, &v.slice(axis, 0, t)?], r - 1)?;
        let dec = self.core.forward(store, &enc_x, &v.slice(axis, t, tau)?)?;
        self.out.forward(store, &dec)
    }
}

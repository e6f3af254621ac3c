//! Two-stage training: latent pre-training on the reconstruction loss, then joint
//! adversarial training. Also forecasting and checkpoints.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Pad, TrainConfig};
use crate::critic::{adversarial_term, discriminator_loss, gradient_penalty, Condition, Critic};
use crate::data::{NormStats, Splits, WindowBatch};
use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::mapper::{reconstruction_loss, Mapper, Restorer};
use crate::nn::{ParamId, ParamStore};
use crate::predictor::Predictor;
use crate::tensor::{backward, no_grad, DType, Tensor};

/// All four parameter groups in one store, named `mapper.*`, `restorer.*`, `predictor.*`, `critic.*`.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub mapper: Mapper,
    pub restorer: Restorer,
    pub predictor: Predictor,
    pub critic: Critic,
}

/// Intermediate values of one generator pass.
pub struct Forward {
    pub x_hat: Tensor,
    pub x_tilde: Tensor,
    pub adj: Adjacency,
    pub mse: Tensor,
    pub l_r: Tensor,
    /// Adversarial term before weighting by `gamma`.
    pub adv: Tensor,
    pub l_p: Tensor,
}

impl Model {
    pub fn new(cfg: &TrainConfig, d_c: usize) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.dims(d_c);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let mapper = Mapper::new(&mut store, "mapper", &dims, &mut rng)?;
        let restorer = Restorer::new(&mut store, "restorer", &dims, &mut rng)?;
        let predictor = Predictor::new(&mut store, "predictor", dims.d_l, d_c, dims.d_p, &mut rng);
        let critic = Critic::new(&mut store, "critic", d_c, dims.d_p, &mut rng);
        Ok(Self { store, mapper, restorer, predictor, critic })
    }

    pub fn group(&self, prefix: &str) -> Vec<ParamId> {
        self.store.ids_with_prefix(prefix)
    }

    /// Reconstruction of the full window through mapper and restorer.
    pub fn reconstruct(&self, x_full: &Tensor, t_hist: usize) -> Result<Tensor> {
        let latent = self.mapper.map_to_latent(&self.store, x_full, t_hist)?;
        self.restorer.restore(&self.store, &latent.h)
    }

    /// Map, predict, restore. Returns the normalized forecast `(.., N, tau, 1)`,
    /// the reconstruction of `x_full`, and the adjacency.
    pub fn pipeline(&self, x_full: &Tensor, v: &Tensor, t_hist: usize) -> Result<(Tensor, Tensor, Adjacency)> {
        let axis = x_full.rank() - 2;
        let tau = x_full.dim(axis) - t_hist;
        let latent = self.mapper.map_to_latent(&self.store, x_full, t_hist)?;
        let x_tilde = self.restorer.restore(&self.store, &latent.h)?;
        let h_hist = latent.h.slice(axis, 0, t_hist)?;
        let h_future = self.predictor.predict_latent(&self.store, &h_hist, v)?;
        let h_hat = Tensor::concat(&[&h_hist, &h_future], axis)?;
        let x_hat = self.restorer.restore(&self.store, &h_hat)?.slice(axis, t_hist, tau)?;
        Ok((x_hat, x_tilde, latent.adj))
    }

    /// Generator loss `mse + lambda L_R + gamma adv` on a batch.
    pub fn generator_loss(&self, cfg: &TrainConfig, batch: &WindowBatch) -> Result<Forward> {
        let (x_hat, x_tilde, adj) = self.pipeline(&batch.x_full, &batch.v, batch.t_hist)?;
        let x_hist = batch.x_hist()?;
        let mse = x_hat.mse(&batch.x_future()?)?;
        let l_r = reconstruction_loss(&batch.x_full, &x_tilde)?;
        let y_fake = self.critic.score(&self.store, &x_hat, Condition { x_hist: &x_hist, v: &batch.v }, &adj)?;
        let adv = adversarial_term(&y_fake, 1.0, cfg.adv_term)?;
        let l_p = mse.add(&l_r.scale(cfg.lambda))?.add(&adv.scale(cfg.gamma))?;
        Ok(Forward { x_hat, x_tilde, adj, mse, l_r, adv, l_p })
    }

    /// Normalized forecast from history only; the unknown future is filled per `pad`.
    pub fn forecast_normalized(&self, x_hist: &Tensor, v: &Tensor, pad: Pad) -> Result<Tensor> {
        let r = x_hist.rank();
        let axis = r - 2;
        let t = x_hist.dim(axis);
        if v.rank() != r || v.dim(axis) <= t {
            return Err(Error::Data(format!("covariates {:?} do not extend past history {:?}", v.shape(), x_hist.shape())));
        }
        let tau = v.dim(axis) - t;
        no_grad(|| {
            let filler = match pad {
                Pad::Zero => {
                    let mut shape = x_hist.shape().to_vec();
                    shape[axis] = tau;
                    Tensor::zeros(&shape)
                }
                Pad::Mean => {
                    let mut shape = x_hist.shape().to_vec();
                    shape[axis] = tau;
                    x_hist.mean_axis(axis)?.broadcast_to(&shape)?
                }
            };
            let x_full = Tensor::concat(&[x_hist, &filler], axis)?;
            Ok(self.pipeline(&x_full, v, t)?.0)
        })
    }

    /// De-normalized forecast `(.., N, tau, 1)`.
    pub fn forecast(&self, x_hist: &Tensor, v: &Tensor, pad: Pad, stats: &NormStats) -> Result<Tensor> {
        stats.denormalize(&self.forecast_normalized(x_hist, v, pad)?)
    }
}

/// Adam over a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub ids: Vec<ParamId>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, lr: f64) -> Self {
        let m: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; store.get(id).data().len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, v: m.clone(), m, ids }
    }

    /// Applies one update; `grads[i]` belongs to `ids[i]`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, &id) in self.ids.iter().enumerate() {
            let p = store.get(id);
            let g = grads[i].data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut next = p.to_vec();
            for j in 0..next.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                next[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            let t = match p.dtype() {
                DType::Real => Tensor::from_vec(next, p.shape())?,
                DType::Complex => Tensor::from_interleaved(next, p.shape())?,
            };
            store.set(id, t)?;
        }
        Ok(())
    }
}

/// One row of the training log. Pre-training rows leave the adversarial columns as NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub l_p: f64,
    pub mse: f64,
    pub l_r: f64,
    pub adv: f64,
    pub l_d: f64,
    pub gp: f64,
}

pub const LOG_HEADER: &str = "epoch,step,L_P,mse,L_R,adv,L_D,gp";

impl LogRow {
    pub fn csv_line(&self) -> String {
        let f = |v: f64| if v.is_nan() { String::new() } else { format!("{v:?}") };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            f(self.l_p),
            f(self.mse),
            f(self.l_r),
            f(self.adv),
            f(self.l_d),
            f(self.gp)
        )
    }

    /// Bitwise equality, treating NaN columns as equal.
    pub fn same_bits(&self, o: &LogRow) -> bool {
        let b = |r: &LogRow| [r.l_p, r.mse, r.l_r, r.adv, r.l_d, r.gp].map(f64::to_bits);
        self.epoch == o.epoch && self.step == o.step && b(self) == b(o)
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub opt_pre: Adam,
    pub opt_gen: Adam,
    pub opt_critic: Adam,
    /// Drives window shuffling and gradient-penalty interpolation.
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps across both stages.
    pub step: usize,
    pub log: Vec<LogRow>,
    last_finite: Option<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, d_c: usize) -> Result<Self> {
        let model = Model::new(&cfg, d_c)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let s = &model.store;
        let mut pre = model.group("mapper.");
        pre.extend(model.group("restorer."));
        let mut gen = pre.clone();
        gen.extend(model.group("predictor."));
        if cfg.include_theta_d_in_lp {
            gen.extend(model.group("critic."));
        }
        let opt_pre = Adam::new(s, pre, cfg.lr);
        let opt_gen = Adam::new(s, gen, cfg.lr);
        let opt_critic = Adam::new(s, model.group("critic."), cfg.lr_d);
        Ok(Self { cfg, model, opt_pre, opt_gen, opt_critic, rng, epoch: 0, step: 0, log: Vec::new(), last_finite: None })
    }

    fn check_finite(&mut self, v: f64) -> Result<()> {
        if v.is_finite() {
            self.last_finite = Some(v);
            Ok(())
        } else {
            Err(Error::Diverged { batch: self.step, last_finite: self.last_finite })
        }
    }

    /// One Adam step on mapper and restorer parameters against the reconstruction loss.
    pub fn pretrain_step(&mut self, batch: &WindowBatch) -> Result<f64> {
        let x_tilde = self.model.reconstruct(&batch.x_full, batch.t_hist)?;
        let l_r = reconstruction_loss(&batch.x_full, &x_tilde)?;
        let value = l_r.item();
        self.check_finite(value)?;
        let params = self.model.store.tensors(&self.opt_pre.ids);
        let grads = backward(&l_r, &params, false)?.grads;
        self.opt_pre.step(&mut self.model.store, &grads)?;
        self.step += 1;
        self.log.push(LogRow { epoch: self.epoch, step: self.step, l_p: f64::NAN, mse: f64::NAN, l_r: value, adv: f64::NAN, l_d: f64::NAN, gp: f64::NAN });
        Ok(value)
    }

    /// Generator step on `L_P`, then one critic step on `L_D`.
    ///
    /// The critic step scores the forecast and adjacency of this batch's generator
    /// pass, detached and taken before the generator update.
    pub fn adversarial_step(&mut self, batch: &WindowBatch) -> Result<LogRow> {
        let fwd = self.model.generator_loss(&self.cfg, batch)?;
        let l_p = fwd.l_p.item();
        self.check_finite(l_p)?;
        let params = self.model.store.tensors(&self.opt_gen.ids);
        let grads = backward(&fwd.l_p, &params, false)?.grads;
        self.opt_gen.step(&mut self.model.store, &grads)?;

        let x_fake = fwd.x_hat.detach();
        let adj = Adjacency {
            a_tilde: fwd.adj.a_tilde.detach(),
            a: fwd.adj.a.detach(),
            norm: fwd.adj.norm.detach(),
            beta: fwd.adj.beta,
        };
        let x_hist = batch.x_hist()?;
        let x_real = batch.x_future()?;
        let cond = Condition { x_hist: &x_hist, v: &batch.v };
        let (l_d, gp) = critic_loss(&self.model, &x_real, &x_fake, cond, &adj, self.cfg.alpha, &mut self.rng)?;
        let l_d_value = l_d.item();
        self.check_finite(l_d_value)?;
        let params = self.model.store.tensors(&self.opt_critic.ids);
        let grads = backward(&l_d, &params, false)?.grads;
        self.opt_critic.step(&mut self.model.store, &grads)?;

        self.step += 1;
        let row = LogRow {
            epoch: self.epoch,
            step: self.step,
            l_p,
            mse: fwd.mse.item(),
            l_r: fwd.l_r.item(),
            adv: fwd.adv.item(),
            l_d: l_d_value,
            gp: gp.item(),
        };
        self.log.push(row);
        Ok(row)
    }

    pub fn total_epochs(&self) -> usize {
        self.cfg.epochs_pretrain + self.cfg.epochs_adv
    }

    /// One pass over the (strided, shuffled) training windows in the stage the epoch belongs to.
    pub fn run_epoch(&mut self, splits: &Splits) -> Result<()> {
        let order = splits.train_order(self.cfg.train_stride, &mut self.rng);
        let pretrain = self.epoch < self.cfg.epochs_pretrain;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = splits.train.batch(chunk, &splits.stats)?;
            if pretrain {
                self.pretrain_step(&batch)?;
            } else {
                self.adversarial_step(&batch)?;
            }
        }
        self.epoch += 1;
        if let Some(last) = self.log.last() {
            log::info!("epoch {} done: {}", self.epoch, last.csv_line());
        }
        Ok(())
    }

    /// Runs epochs until `until` epochs are complete (capped at the configured total).
    pub fn train_until(&mut self, splits: &Splits, until: usize) -> Result<()> {
        while self.epoch < until.min(self.total_epochs()) {
            self.run_epoch(splits)?;
        }
        Ok(())
    }

    pub fn log_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for row in &self.log {
            let _ = writeln!(s, "{}", row.csv_line());
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_checkpoint_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = self.cfg.to_text();
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(meta, "state.d_c = {}", self.model.predictor.d_c);
        let _ = writeln!(meta, "state.epoch = {}", self.epoch);
        let _ = writeln!(meta, "state.step = {}", self.step);
        let _ = writeln!(meta, "state.rng_seed = {seed}");
        let _ = writeln!(meta, "state.rng_stream = {}", self.rng.get_stream());
        let _ = writeln!(meta, "state.rng_word_pos = {}", self.rng.get_word_pos());
        for (name, opt) in self.optimizers() {
            let _ = writeln!(meta, "state.{name}.t = {}", opt.t);
        }

        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        let store = &self.model.store;
        for id in store.ids() {
            tensors.push((format!("param/{}", store.name(id)), store.get(id).clone()));
        }
        for (name, opt) in self.optimizers() {
            for (i, &id) in opt.ids.iter().enumerate() {
                let pname = store.name(id);
                tensors.push((format!("{name}.m/{pname}"), Tensor::from_vec(opt.m[i].clone(), &[opt.m[i].len()])?));
                tensors.push((format!("{name}.v/{pname}"), Tensor::from_vec(opt.v[i].clone(), &[opt.v[i].len()])?));
            }
        }
        Ok(encode_checkpoint(&meta, &tensors))
    }

    fn optimizers(&self) -> [(&'static str, &Adam); 3] {
        [("adam_pre", &self.opt_pre), ("adam_gen", &self.opt_gen), ("adam_critic", &self.opt_critic)]
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = decode_checkpoint(bytes)?;
        let mut cfg_text = String::new();
        let mut state = std::collections::HashMap::new();
        for line in meta.lines() {
            match line.strip_prefix("state.") {
                Some(rest) => {
                    let (k, v) = rest.split_once(" = ").ok_or_else(|| Error::Format(format!("bad state line {line:?}")))?;
                    state.insert(k.to_string(), v.to_string());
                }
                None => {
                    cfg_text.push_str(line);
                    cfg_text.push('\n');
                }
            }
        }
        let get = |k: &str| state.get(k).ok_or_else(|| Error::Format(format!("missing state.{k}")));
        let num = |k: &str| -> Result<u128> { get(k)?.parse().map_err(|_| Error::Format(format!("bad state.{k}"))) };
        let cfg = TrainConfig::parse(&cfg_text)?;
        let mut tr = Trainer::new(cfg, num("d_c")? as usize)?;
        tr.epoch = num("epoch")? as usize;
        tr.step = num("step")? as usize;
        let hex = get("rng_seed")?;
        let mut seed = [0u8; 32];
        if hex.len() != 64 {
            return Err(Error::Format("rng seed must be 32 bytes".into()));
        }
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| Error::Format("bad rng seed".into()))?;
        }
        tr.rng = ChaCha8Rng::from_seed(seed);
        tr.rng.set_stream(num("rng_stream")? as u64);
        tr.rng.set_word_pos(num("rng_word_pos")?);

        let by_name: std::collections::HashMap<&str, &Tensor> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let fetch = |name: &str| by_name.get(name).copied().ok_or_else(|| Error::Format(format!("missing tensor {name}")));
        let ids: Vec<ParamId> = tr.model.store.ids().collect();
        for id in ids {
            let t = fetch(&format!("param/{}", tr.model.store.name(id)))?.clone();
            tr.model.store.set(id, t)?;
        }
        let t_pre = num("adam_pre.t")? as u64;
        let t_gen = num("adam_gen.t")? as u64;
        let t_critic = num("adam_critic.t")? as u64;
        let store = tr.model.store.clone();
        for (name, opt, t) in [("adam_pre", &mut tr.opt_pre, t_pre), ("adam_gen", &mut tr.opt_gen, t_gen), ("adam_critic", &mut tr.opt_critic, t_critic)] {
            opt.t = t;
            for (i, &id) in opt.ids.iter().enumerate() {
                let pname = store.name(id);
                let m = fetch(&format!("{name}.m/{pname}"))?;
                let v = fetch(&format!("{name}.v/{pname}"))?;
                if m.numel() != opt.m[i].len() || v.numel() != opt.v[i].len() {
                    return Err(Error::Format(format!("moment size mismatch for {pname}")));
                }
                opt.m[i] = m.to_vec();
                opt.v[i] = v.to_vec();
            }
        }
        Ok(tr)
    }
}

/// `L_D` and the gradient penalty for a detached fake batch.
pub fn critic_loss(model: &Model, x_real: &Tensor, x_fake: &Tensor, cond: Condition, adj: &Adjacency, alpha: f64, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let critic = &model.critic;
    let store = &model.store;
    let y_real = critic.score(store, x_real, cond, adj)?.mean()?;
    let y_fake = critic.score(store, x_fake, cond, adj)?.mean()?;
    let f = |x: &Tensor| critic.score(store, x, cond, adj);
    let gp = gradient_penalty(&f, x_real, x_fake, rng)?;
    Ok((discriminator_loss(&y_real, &y_fake, &gp, alpha)?, gp))
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Magic, version, config text, then `(name, dtype tag, rank, dims, f64 LE data)` records.
pub fn encode_checkpoint(meta: &str, tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(match t.dtype() {
            DType::Real => 0,
            DType::Complex => 1,
        });
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let meta_len = c.u32()? as usize;
    let meta = String::from_utf8(c.take(meta_len)?.to_vec()).map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let count = c.u32()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let tag = c.take(1)?[0];
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let width = match tag {
            0 => 1,
            1 => 2,
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        };
        let n: usize = shape.iter().product::<usize>() * width;
        let raw = c.take(n * 8)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let t = if tag == 0 { Tensor::from_vec(data, &shape)? } else { Tensor::from_interleaved(data, &shape)? };
        tensors.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    Ok((meta, tensors))
}

//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::critic::AdvTerm;
use crate::data::CovariateKind;
use crate::error::{Error, Result};
use crate::mapper::{Dims, MixerKind};

/// How the unknown future is filled at forecast time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    Zero,
    /// Per-series mean of the observed history.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub lr: f64,
    pub lr_d: f64,
    pub epochs_pretrain: usize,
    pub epochs_adv: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub k: usize,
    pub layers: usize,
    pub d: usize,
    pub d_l: usize,
    pub d_m: usize,
    pub d_k: usize,
    pub d_p: usize,
    pub a: f64,
    pub include_theta_d_in_lp: bool,
    pub adv_term: AdvTerm,
    pub pad: Pad,
    pub mixer: MixerKind,
    pub t_hist: usize,
    pub tau: usize,
    /// Every `train_stride`-th training window start is used per epoch.
    pub train_stride: usize,
    pub split: [f64; 3],
    pub covariates: CovariateKind,
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            gamma: 5e-5,
            beta: 0.9,
            alpha: 10.0,
            lr: 0.001,
            lr_d: 0.0005,
            epochs_pretrain: 10,
            epochs_adv: 40,
            batch_size: 32,
            seed: 0,
            k: 4,
            layers: 2,
            d: 32,
            d_l: 32,
            d_m: 32,
            d_k: 32,
            d_p: 32,
            a: 0.01,
            include_theta_d_in_lp: true,
            adv_term: AdvTerm::Log,
            pad: Pad::Zero,
            mixer: MixerKind::Afno,
            t_hist: 24,
            tau: 6,
            train_stride: 1,
            split: [0.7, 0.2, 0.1],
            covariates: CovariateKind::MinuteHour,
            normalize: true,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

impl TrainConfig {
    pub fn dims(&self, d_c: usize) -> Dims {
        Dims {
            d: self.d,
            d_l: self.d_l,
            d_m: self.d_m,
            d_k: self.d_k,
            d_p: self.d_p,
            d_c,
            k: self.k,
            a: self.a,
            layers: self.layers,
            beta: self.beta,
            mixer: self.mixer,
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "lambda" => self.lambda = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "lr_d" => self.lr_d = parse_num(key, v)?,
            "epochs_pretrain" => self.epochs_pretrain = parse_num(key, v)?,
            "epochs_adv" => self.epochs_adv = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "layers" => self.layers = parse_num(key, v)?,
            "d" => self.d = parse_num(key, v)?,
            "d_l" => self.d_l = parse_num(key, v)?,
            "d_m" => self.d_m = parse_num(key, v)?,
            "d_k" => self.d_k = parse_num(key, v)?,
            "d_p" => self.d_p = parse_num(key, v)?,
            "a" => self.a = parse_num(key, v)?,
            "include_theta_d_in_lp" => self.include_theta_d_in_lp = parse_bool(key, v)?,
            "adv_term" => {
                self.adv_term = match v {
                    "log" => AdvTerm::Log,
                    "negative_score" => AdvTerm::NegativeScore,
                    _ => return Err(Error::Config(format!("adv_term: expected log or negative_score, got {v:?}"))),
                }
            }
            "pad" => {
                self.pad = match v {
                    "zero" => Pad::Zero,
                    "mean" => Pad::Mean,
                    _ => return Err(Error::Config(format!("pad: expected zero or mean, got {v:?}"))),
                }
            }
            "mixer" => {
                self.mixer = match v {
                    "afno" => MixerKind::Afno,
                    "identity" => MixerKind::Identity,
                    _ => return Err(Error::Config(format!("mixer: expected afno or identity, got {v:?}"))),
                }
            }
            "t_hist" => self.t_hist = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "train_stride" => self.train_stride = parse_num(key, v)?,
            "split" => {
                let parts: Vec<&str> = v.split([',', ':']).map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!("split: expected three ratios, got {v:?}")));
                }
                let mut r = [0.0; 3];
                for (slot, p) in r.iter_mut().zip(parts) {
                    *slot = parse_num(key, p)?;
                }
                if r.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::Config(format!("split: ratios must be nonnegative, got {v:?}")));
                }
                let sum: f64 = r.iter().sum();
                self.split = if (sum - 1.0).abs() < 1e-12 { r } else { r.map(|x| x / sum) };
            }
            "covariates" => self.covariates = CovariateKind::parse(v)?,
            "normalize" => self.normalize = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda >= 0.0 && self.gamma >= 0.0 && self.alpha >= 0.0) {
            return bad(format!("lambda, gamma, alpha must be >= 0 ({}, {}, {})", self.lambda, self.gamma, self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.lr > 0.0 && self.lr_d > 0.0) {
            return bad(format!("learning rates must be > 0 ({}, {})", self.lr, self.lr_d));
        }
        if self.k == 0 || self.d % self.k != 0 {
            return bad(format!("d = {} is not divisible by k = {}", self.d, self.k));
        }
        if !(self.a >= 0.0) {
            return bad(format!("a must be >= 0, got {}", self.a));
        }
        if [self.d, self.d_l, self.d_m, self.d_k, self.d_p, self.batch_size, self.t_hist, self.tau, self.train_stride].contains(&0) {
            return bad("widths, batch size, window lengths and stride must be positive".into());
        }
        Ok(())
    }

    /// Every field as `key = value` lines; [`TrainConfig::parse`] inverts it exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let adv = match self.adv_term {
            AdvTerm::Log => "log",
            AdvTerm::NegativeScore => "negative_score",
        };
        let pad = match self.pad {
            Pad::Zero => "zero",
            Pad::Mean => "mean",
        };
        let mixer = match self.mixer {
            MixerKind::Afno => "afno",
            MixerKind::Identity => "identity",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("lambda", format!("{:?}", self.lambda)),
            ("gamma", format!("{:?}", self.gamma)),
            ("beta", format!("{:?}", self.beta)),
            ("alpha", format!("{:?}", self.alpha)),
            ("lr", format!("{:?}", self.lr)),
            ("lr_d", format!("{:?}", self.lr_d)),
            ("epochs_pretrain", self.epochs_pretrain.to_string()),
            ("epochs_adv", self.epochs_adv.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("k", self.k.to_string()),
            ("layers", self.layers.to_string()),
            ("d", self.d.to_string()),
            ("d_l", self.d_l.to_string()),
            ("d_m", self.d_m.to_string()),
            ("d_k", self.d_k.to_string()),
            ("d_p", self.d_p.to_string()),
            ("a", format!("{:?}", self.a)),
            ("include_theta_d_in_lp", self.include_theta_d_in_lp.to_string()),
            ("adv_term", adv.into()),
            ("pad", pad.into()),
            ("mixer", mixer.into()),
            ("t_hist", self.t_hist.to_string()),
            ("tau", self.tau.to_string()),
            ("train_stride", self.train_stride.to_string()),
            ("split", format!("{:?},{:?},{:?}", self.split[0], self.split[1], self.split[2])),
            ("covariates", self.covariates.as_str().into()),
            ("normalize", self.normalize.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

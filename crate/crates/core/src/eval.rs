//! Test-window evaluation against the persistence baseline.

use crate::config::Pad;
use crate::data::{NormStats, WindowSet};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics_by_horizon, persistence_forecast, MetricReport};
use crate::tensor::Tensor;
use crate::train::Model;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub model: MetricReport,
    pub persistence: MetricReport,
    pub windows: usize,
}

impl Evaluation {
    /// `1 - MAE_model / MAE_persistence`.
    pub fn mae_improvement(&self) -> f64 {
        1.0 - self.model.overall.mae / self.persistence.overall.mae
    }
}

/// Scores forecasts for every `stride`-th window of `set`, on the raw scale.
pub fn evaluate(model: &Model, set: &WindowSet, stats: &NormStats, pad: Pad, batch_size: usize, stride: usize) -> Result<Evaluation> {
    let starts = set.strided(stride);
    if starts.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    let mut naive = Vec::new();
    for batch in set.batches(&starts, batch_size, stats)? {
        let x_hist = batch.x_hist()?;
        truth.push(stats.denormalize(&batch.x_future()?)?);
        pred.push(model.forecast(&x_hist, &batch.v, pad, stats)?);
        naive.push(stats.denormalize(&persistence_forecast(&x_hist, batch.tau)?)?);
    }
    let cat = |v: &[Tensor]| Tensor::concat(&v.iter().collect::<Vec<_>>(), 0);
    let (truth, pred, naive) = (cat(&truth)?, cat(&pred)?, cat(&naive)?);
    Ok(Evaluation {
        model: compute_metrics_by_horizon(&truth, &pred, 2)?,
        persistence: compute_metrics_by_horizon(&truth, &naive, 2)?,
        windows: starts.len(),
    })
}

//! Forecast error metrics.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{pairwise_sum, Tensor};

/// Targets with `|y| <= MAPE_MASK` are excluded from MAPE.
pub const MAPE_MASK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when every target is masked.
    pub mape_percent: Option<f64>,
    pub n_points: usize,
    /// Entries excluded from MAPE.
    pub n_masked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub overall: Scores,
    /// One entry per forecast step, when a horizon axis was given.
    pub per_horizon: Vec<Scores>,
}

fn scores(truth: &[f64], pred: &[f64]) -> Scores {
    let abs: Vec<f64> = truth.iter().zip(pred).map(|(y, p)| (p - y).abs()).collect();
    let sq: Vec<f64> = abs.iter().map(|e| e * e).collect();
    let pct: Vec<f64> = truth
        .iter()
        .zip(&abs)
        .filter(|(y, _)| y.abs() > MAPE_MASK)
        .map(|(y, e)| e / y.abs())
        .collect();
    let n = truth.len();
    let nf = n.max(1) as f64;
    Scores {
        mae: pairwise_sum(&abs) / nf,
        rmse: (pairwise_sum(&sq) / nf).sqrt(),
        mape_percent: (!pct.is_empty()).then(|| 100.0 * pairwise_sum(&pct) / pct.len() as f64),
        n_points: n,
        n_masked: n - pct.len(),
    }
}

/// MAE, RMSE and masked MAPE over all entries.
pub fn compute_metrics(y_true: &Tensor, y_pred: &Tensor) -> Result<MetricReport> {
    if y_true.shape() != y_pred.shape() {
        return Err(Error::shape("compute_metrics", y_true.shape(), y_pred.shape()));
    }
    Ok(MetricReport { overall: scores(y_true.data(), y_pred.data()), per_horizon: Vec::new() })
}

/// As [`compute_metrics`], plus a breakdown along `horizon_axis`.
pub fn compute_metrics_by_horizon(y_true: &Tensor, y_pred: &Tensor, horizon_axis: usize) -> Result<MetricReport> {
    let mut report = compute_metrics(y_true, y_pred)?;
    if horizon_axis >= y_true.rank() {
        return Err(Error::invalid("compute_metrics", format!("horizon axis {horizon_axis} out of range")));
    }
    for step in 0..y_true.dim(horizon_axis) {
        let t = y_true.slice(horizon_axis, step, 1)?;
        let p = y_pred.slice(horizon_axis, step, 1)?;
        report.per_horizon.push(scores(t.data(), p.data()));
    }
    Ok(report)
}

/// Repeats the last observed value of `x_hist: (.., L, c)` over `tau` steps.
pub fn persistence_forecast(x_hist: &Tensor, tau: usize) -> Result<Tensor> {
    let axis = x_hist.rank() - 2;
    let last = x_hist.slice(axis, x_hist.dim(axis) - 1, 1)?;
    let mut shape = x_hist.shape().to_vec();
    shape[axis] = tau;
    last.broadcast_to(&shape)
}

fn fmt_mape(m: Option<f64>) -> String {
    m.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "horizon,mae,rmse,mape_percent,n_points,n_masked";

    /// Machine-readable rows: `all` first, then one row per step.
    pub fn to_csv(&self) -> String {
        let row = |label: String, s: &Scores| {
            format!(
                "{label},{:.10},{:.10},{},{},{}\n",
                s.mae,
                s.rmse,
                s.mape_percent.map_or_else(|| "NA".to_string(), |v| format!("{v:.10}")),
                s.n_points,
                s.n_masked
            )
        };
        let mut out = format!("{}\n", Self::CSV_HEADER);
        out.push_str(&row("all".into(), &self.overall));
        for (i, s) in self.per_horizon.iter().enumerate() {
            out.push_str(&row((i + 1).to_string(), s));
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>12} {:>12} {:>12} {:>9}", "horizon", "MAE", "RMSE", "MAPE%", "masked")?;
        let mut line = |label: &str, s: &Scores| {
            writeln!(f, "{label:>8} {:>12.6} {:>12.6} {:>12} {:>9}", s.mae, s.rmse, fmt_mape(s.mape_percent), s.n_masked)
        };
        line("all", &self.overall)?;
        for (i, s) in self.per_horizon.iter().enumerate() {
            line(&(i + 1).to_string(), s)?;
        }
        Ok(())
    }
}

//! Dataset ingestion, calendar covariates, normalization, splitting and windowing.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TIME_FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"];

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    TIME_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// `N` series over a shared time axis, stored series-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub ids: Vec<String>,
    /// `values[i * total + t]`.
    pub values: Vec<f64>,
    pub n: usize,
    pub total: usize,
    pub start_time: Option<NaiveDateTime>,
    pub frequency: Option<Duration>,
}

impl SeriesDataset {
    pub fn series(&self, i: usize) -> &[f64] {
        &self.values[i * self.total..(i + 1) * self.total]
    }

    pub fn timestamp(&self, t: usize) -> Option<NaiveDateTime> {
        Some(self.start_time? + self.frequency? * t as i32)
    }
}

/// Reads a CSV with a header of series ids and an optional leading timestamp column.
pub fn load_csv(path: &Path) -> Result<SeriesDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path).map_err(csv_err)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
    };
    let width = header.len();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        if rec.len() != width {
            return Err(Error::Parse { line, msg: format!("expected {width} fields, found {}", rec.len()) });
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let has_time = rows.first().is_some_and(|r| r[0].trim().parse::<f64>().is_err() && parse_time(&r[0]).is_some());
    let first = usize::from(has_time);
    let ids: Vec<String> = header.iter().skip(first).map(|s| s.trim().to_string()).collect();
    let (n, total) = (ids.len(), rows.len());
    if n == 0 {
        return Err(Error::Parse { line: 1, msg: "no series columns".into() });
    }

    let mut values = vec![0.0; n * total];
    let mut times = Vec::new();
    let mut nans = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        let line = t + 2;
        if has_time {
            times.push(parse_time(&row[0]).ok_or_else(|| Error::Parse { line, msg: format!("bad timestamp {:?}", row[0]) })?);
        }
        for (i, cell) in row[first..].iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("non-numeric cell {cell:?} in column {}", i + first) })?;
            if v.is_nan() {
                nans.push((t, i));
            }
            values[i * total + t] = v;
        }
    }
    if !nans.is_empty() {
        return Err(Error::Data(format!("NaN cells at (row, col): {nans:?}")));
    }
    let frequency = (times.len() >= 2).then(|| times[1] - times[0]);
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    log::info!("loaded {name}: {n} series x {total} steps");
    Ok(SeriesDataset { name, ids, values, n, total, start_time: times.first().copied(), frequency })
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        return match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Io(std::io::Error::other(format!("{other:?}"))),
        };
    }
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, msg: e.to_string() }
}

/// Writes the dataset in the format [`load_csv`] reads, with round-trip exact floats.
pub fn write_csv(ds: &SeriesDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let timed = ds.start_time.is_some() && ds.frequency.is_some();
    let mut header: Vec<String> = Vec::new();
    if timed {
        header.push("timestamp".into());
    }
    header.extend(ds.ids.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..ds.total {
        let mut row: Vec<String> = Vec::with_capacity(ds.n + 1);
        if let (true, Some(ts)) = (timed, ds.timestamp(t)) {
            row.push(ts.format("%Y-%m-%d %H:%M:%S").to_string());
        }
        row.extend((0..ds.n).map(|i| format!("{:?}", ds.values[i * ds.total + t])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    MinuteHour,
    HourDay,
    DayMonthHourDay,
    Zeros,
}

impl CovariateKind {
    pub fn channels(self) -> usize {
        match self {
            CovariateKind::MinuteHour | CovariateKind::DayMonthHourDay => 2,
            CovariateKind::HourDay | CovariateKind::Zeros => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "minute-hour" => Ok(Self::MinuteHour),
            "hour-day" => Ok(Self::HourDay),
            "day-month-hour-day" => Ok(Self::DayMonthHourDay),
            "zeros" => Ok(Self::Zeros),
            other => Err(Error::Config(format!("unknown covariate kind {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MinuteHour => "minute-hour",
            Self::HourDay => "hour-day",
            Self::DayMonthHourDay => "day-month-hour-day",
            Self::Zeros => "zeros",
        }
    }

    fn features(self, ts: NaiveDateTime) -> Vec<f64> {
        let minute = ts.minute() as f64 / 59.0;
        let hour = ts.hour() as f64 / 23.0;
        let day = (ts.day() - 1) as f64 / 30.0;
        match self {
            Self::MinuteHour => vec![minute, hour],
            Self::HourDay => vec![hour],
            Self::DayMonthHourDay => vec![hour, day],
            Self::Zeros => vec![0.0],
        }
    }
}

/// Calendar features scaled to `[0, 1]`, identical for every series: `(N, total, d_c)`.
pub fn make_covariates(ds: &SeriesDataset, kind: CovariateKind) -> Result<Tensor> {
    let dc = kind.channels();
    let mut row = Vec::with_capacity(ds.total * dc);
    for t in 0..ds.total {
        if kind == CovariateKind::Zeros {
            row.push(0.0);
            continue;
        }
        let ts = ds
            .timestamp(t)
            .ok_or_else(|| Error::Config(format!("covariates {:?} need timestamps and a frequency", kind.as_str())))?;
        row.extend(kind.features(ts));
    }
    let data: Vec<f64> = (0..ds.n).flat_map(|_| row.iter().copied()).collect();
    Tensor::from_vec(data, &[ds.n, ds.total, dc])
}

/// Per-series z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    /// Mean and population standard deviation of `values[i][range]`; zero spread maps to 1.
    pub fn fit(ds: &SeriesDataset, range: std::ops::Range<usize>) -> Self {
        let mut mean = Vec::with_capacity(ds.n);
        let mut std = Vec::with_capacity(ds.n);
        for i in 0..ds.n {
            let s = &ds.series(i)[range.clone()];
            let m = s.iter().sum::<f64>() / s.len() as f64;
            let var = s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / s.len() as f64;
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    /// Maps normalized `(.., N, L, 1)` values back to the raw scale.
    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.mean.len();
        let r = x.rank();
        if r < 3 || x.dim(r - 3) != n {
            return Err(Error::shape("denormalize", x.shape(), &[n]));
        }
        let std = Tensor::from_vec(self.std.clone(), &[n, 1, 1])?;
        let mean = Tensor::from_vec(self.mean.clone(), &[n, 1, 1])?;
        x.mul(&std)?.add(&mean)
    }
}

/// Contiguous slice of the dataset, normalized, with every valid window start.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// First global timestep of the split.
    pub offset: usize,
    pub len: usize,
    /// Normalized values, `(N, len)` series-major.
    pub x: Vec<f64>,
    /// Covariates, `(N, len, d_c)`.
    pub v: Vec<f64>,
    pub n: usize,
    pub d_c: usize,
    pub t_hist: usize,
    pub tau: usize,
    /// Window starts relative to `offset`.
    pub starts: Vec<usize>,
}

/// A batch of windows: `x_full (B, N, T+tau, 1)` and `v (B, N, T+tau, d_c)`.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub x_full: Tensor,
    pub v: Tensor,
    pub t_hist: usize,
    pub tau: usize,
    pub stats: NormStats,
    /// Global start index of each window.
    pub starts: Vec<usize>,
}

impl WindowBatch {
    pub fn x_hist(&self) -> Result<Tensor> {
        self.x_full.slice(2, 0, self.t_hist)
    }

    pub fn x_future(&self) -> Result<Tensor> {
        self.x_full.slice(2, self.t_hist, self.tau)
    }

    pub fn batch_size(&self) -> usize {
        self.x_full.dim(0)
    }
}

impl WindowSet {
    pub fn window_len(&self) -> usize {
        self.t_hist + self.tau
    }

    /// Assembles the windows starting at the given relative starts.
    pub fn batch(&self, starts: &[usize], stats: &NormStats) -> Result<WindowBatch> {
        let (n, w, dc) = (self.n, self.window_len(), self.d_c);
        let mut x = Vec::with_capacity(starts.len() * n * w);
        let mut v = Vec::with_capacity(starts.len() * n * w * dc);
        for &s in starts {
            for i in 0..n {
                x.extend_from_slice(&self.x[i * self.len + s..i * self.len + s + w]);
                let base = (i * self.len + s) * dc;
                v.extend_from_slice(&self.v[base..base + w * dc]);
            }
        }
        let b = starts.len();
        Ok(WindowBatch {
            x_full: Tensor::from_vec(x, &[b, n, w, 1])?,
            v: Tensor::from_vec(v, &[b, n, w, dc])?,
            t_hist: self.t_hist,
            tau: self.tau,
            stats: stats.clone(),
            starts: starts.iter().map(|s| s + self.offset).collect(),
        })
    }

    /// Windows in `order`, grouped into batches of at most `batch_size`.
    pub fn batches(&self, order: &[usize], batch_size: usize, stats: &NormStats) -> Result<Vec<WindowBatch>> {
        order.chunks(batch_size.max(1)).map(|c| self.batch(c, stats)).collect()
    }

    /// Every `stride`-th window start.
    pub fn strided(&self, stride: usize) -> Vec<usize> {
        self.starts.iter().copied().step_by(stride.max(1)).collect()
    }
}

/// Chronological train / validation / test windows.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub stats: NormStats,
}

impl Splits {
    /// Every `stride`-th training window start from a random phase, shuffled by `rng`.
    pub fn train_order<R: Rng + ?Sized>(&self, stride: usize, rng: &mut R) -> Vec<usize> {
        let stride = stride.max(1);
        let phase = rng.gen_range(0..stride.min(self.train.starts.len()).max(1));
        let mut order: Vec<usize> = self.train.starts.iter().copied().skip(phase).step_by(stride).collect();
        order.shuffle(rng);
        order
    }
}

/// Step counts of the three splits: `round(total r0)`, `round(total r1)`, remainder.
pub fn split_lengths(total: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let train = (total as f64 * ratios[0]).round() as usize;
    let val = ((total as f64 * ratios[1]).round() as usize).min(total - train);
    Ok([train, val, total - train - val])
}

/// Splits chronologically, normalizes with training statistics, and enumerates stride-1 windows.
pub fn split_and_window(ds: &SeriesDataset, covariates: &Tensor, ratios: [f64; 3], t_hist: usize, tau: usize, normalize: bool) -> Result<Splits> {
    if t_hist == 0 || tau == 0 {
        return Err(Error::Config("history and horizon lengths must be positive".into()));
    }
    if covariates.rank() != 3 || covariates.dim(0) != ds.n || covariates.dim(1) != ds.total {
        return Err(Error::shape("split_and_window", covariates.shape(), &[ds.n, ds.total]));
    }
    let lens = split_lengths(ds.total, ratios)?;
    let w = t_hist + tau;
    for (name, len) in ["train", "val", "test"].iter().zip(lens) {
        if len < w {
            return Err(Error::Config(format!("{name} split has {len} steps, fewer than one window of {w}")));
        }
    }
    let stats = if normalize { NormStats::fit(ds, 0..lens[0]) } else { NormStats::identity(ds.n) };
    let dc = covariates.dim(2);
    let make = |offset: usize, len: usize| -> WindowSet {
        let mut x = Vec::with_capacity(ds.n * len);
        let mut v = Vec::with_capacity(ds.n * len * dc);
        for i in 0..ds.n {
            let s = ds.series(i);
            x.extend(s[offset..offset + len].iter().map(|val| (val - stats.mean[i]) / stats.std[i]));
            let base = (i * ds.total + offset) * dc;
            v.extend_from_slice(&covariates.data()[base..base + len * dc]);
        }
        WindowSet { offset, len, x, v, n: ds.n, d_c: dc, t_hist, tau, starts: (0..=len - w).collect() }
    };
    Ok(Splits {
        train: make(0, lens[0]),
        val: make(lens[0], lens[1]),
        test: make(lens[0] + lens[1], lens[2]),
        stats,
    })
}

/// Coupled noisy sinusoids: series `i` adds `coupling` times the mean of its two ring
/// neighbours `i+1`, `i+2` at the previous step, plus `N(0, 0.05^2)` noise.
pub fn gen_synthetic(n_series: usize, steps: usize, coupling: f64, seed: u64) -> Result<SeriesDataset> {
    if !(0.0..1.0).contains(&coupling) {
        return Err(Error::Config(format!("coupling must lie in [0, 1), got {coupling}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let periods: Vec<f64> = (0..n_series).map(|_| rng.gen_range(12.0..48.0)).collect();
    let phases: Vec<f64> = (0..n_series).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let noise = Normal::new(0.0, 0.05).expect("valid normal");
    let mut values = vec![0.0; n_series * steps];
    let mut prev = vec![0.0; n_series];
    for t in 0..steps {
        let mut cur = vec![0.0; n_series];
        for i in 0..n_series {
            let a = prev[(i + 1) % n_series];
            let b = prev[(i + 2) % n_series];
            let base = (std::f64::consts::TAU * t as f64 / periods[i] + phases[i]).sin();
            cur[i] = base + coupling * 0.5 * (a + b) + noise.sample(&mut rng);
            values[i * steps + t] = cur[i];
        }
        prev = cur;
    }
    Ok(SeriesDataset {
        name: format!("synthetic-{seed}"),
        ids: (0..n_series).map(|i| format!("s{i}")).collect(),
        values,
        n: n_series,
        total: steps,
        start_time: NaiveDateTime::parse_from_str("2020-01-01 00:00:00", "%Y-%m-%d %H:%M:%S").ok(),
        frequency: Some(Duration::minutes(5)),
    })
}

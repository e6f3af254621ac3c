//! Command-line entry points.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{gen_synthetic, load_csv, make_covariates, split_and_window, split_lengths, write_csv, NormStats, SeriesDataset};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::metrics::MetricReport;
use crate::mixers::{mixer_cost_report, COST_CSV_HEADER};
use crate::tensor::Tensor;
use crate::train::Trainer;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;
pub const EXIT_NUMERIC: i32 = 6;

#[derive(Parser, Debug)]
#[command(name = "mgcp", version, about = "Multi-grained correlation forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pre-train then adversarially train on a dataset; writes a checkpoint and a loss log.
    Train(TrainArgs),
    /// Scores a checkpoint on the test split against last-value persistence.
    Eval(EvalArgs),
    /// Forecasts the steps after the end of a dataset.
    Forecast(ForecastArgs),
    /// Writes a coupled-sinusoid dataset.
    GenSynth(GenArgs),
    /// Times the three token mixers at growing sizes.
    BenchMixers(BenchArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Key-value config file; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss log CSV; defaults to the checkpoint path with `.log.csv` appended.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Metric CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use every `stride`-th test window.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 20)]
    series: usize,
    #[arg(long, default_value_t = 4000)]
    steps: usize,
    #[arg(long, default_value_t = 0.8)]
    coupling: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated `NxT` sizes.
    #[arg(long, default_value = "8x64,16x64,32x64")]
    sizes: String,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Largest token count global attention may run at.
    #[arg(long, default_value_t = 8192)]
    token_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Parse { .. } | Error::Data(_) | Error::Format(_) => EXIT_DATA,
        Error::Config(_) => EXIT_CONFIG,
        Error::Numeric(_) | Error::Diverged { .. } | Error::SingularDegree { .. } => EXIT_NUMERIC,
        _ => EXIT_OTHER,
    }
}

fn init_logging() {
    let level = std::env::var("MGCP_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp(None).try_init();
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Forecast(a) => forecast(&a),
        Command::GenSynth(a) => gen_synth(&a),
        Command::BenchMixers(a) => bench(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let ds = load_csv(&a.data)?;
    let cov = make_covariates(&ds, cfg.covariates)?;
    let splits = split_and_window(&ds, &cov, cfg.split, cfg.t_hist, cfg.tau, cfg.normalize)?;
    let mut trainer = Trainer::new(cfg, cov.dim(2))?;
    let total = trainer.total_epochs();
    trainer.train_until(&splits, total)?;
    trainer.save(&a.checkpoint)?;
    let log_path = a.out.clone().unwrap_or_else(|| {
        let mut p = a.checkpoint.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write_text(&log_path, &trainer.log_csv())?;
    log::info!("trained {total} epochs, {} steps; checkpoint {}", trainer.step, a.checkpoint.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let trainer = Trainer::load(&a.checkpoint)?;
    let cfg = &trainer.cfg;
    let ds = load_csv(&a.data)?;
    let cov = make_covariates(&ds, cfg.covariates)?;
    let splits = split_and_window(&ds, &cov, cfg.split, cfg.t_hist, cfg.tau, cfg.normalize)?;
    let ev = evaluate(&trainer.model, &splits.test, &splits.stats, cfg.pad, cfg.batch_size, a.stride)?;
    println!("model ({} test windows)\n{}", ev.windows, ev.model);
    println!("persistence\n{}", ev.persistence);
    println!("MAE improvement over persistence: {:.2}%", 100.0 * ev.mae_improvement());
    if let Some(out) = &a.out {
        write_text(out, &metrics_csv(&[("model", &ev.model), ("persistence", &ev.persistence)]))?;
    }
    Ok(())
}

fn metrics_csv(reports: &[(&str, &MetricReport)]) -> String {
    let mut s = format!("forecaster,{}\n", MetricReport::CSV_HEADER);
    for (name, r) in reports {
        for line in r.to_csv().lines().skip(1) {
            let _ = writeln!(s, "{name},{line}");
        }
    }
    s
}

/// Forecast for the `tau` steps after the dataset ends, one row per step.
fn forecast(a: &ForecastArgs) -> Result<()> {
    let trainer = Trainer::load(&a.checkpoint)?;
    let cfg = &trainer.cfg;
    let ds = load_csv(&a.data)?;
    let (t, tau) = (cfg.t_hist, cfg.tau);
    if ds.total < t {
        return Err(Error::Data(format!("need at least {t} steps of history, dataset has {}", ds.total)));
    }
    let stats = if cfg.normalize {
        let train_len = split_lengths(ds.total, cfg.split)?[0];
        NormStats::fit(&ds, 0..train_len.max(1))
    } else {
        NormStats::identity(ds.n)
    };
    // covariates over the history and the horizon past the last row
    let extended = SeriesDataset { total: ds.total + tau, values: vec![0.0; ds.n * (ds.total + tau)], ..ds.clone() };
    let cov = make_covariates(&extended, cfg.covariates)?;
    let start = ds.total - t;
    let mut hist = Vec::with_capacity(ds.n * t);
    for i in 0..ds.n {
        hist.extend(ds.series(i)[start..].iter().map(|v| (v - stats.mean[i]) / stats.std[i]));
    }
    let x_hist = Tensor::from_vec(hist, &[ds.n, t, 1])?;
    let v = cov.slice(1, start, t + tau)?;
    let y = trainer.model.forecast(&x_hist, &v, cfg.pad, &stats)?;

    let mut s = String::from("step");
    if extended.timestamp(0).is_some() {
        s.push_str(",timestamp");
    }
    for id in &ds.ids {
        let _ = write!(s, ",{id}");
    }
    s.push('\n');
    for h in 0..tau {
        let _ = write!(s, "{}", h + 1);
        if let Some(ts) = extended.timestamp(ds.total + h) {
            let _ = write!(s, ",{}", ts.format("%Y-%m-%d %H:%M:%S"));
        }
        for i in 0..ds.n {
            let _ = write!(s, ",{:?}", y.at(&[i, h, 0]));
        }
        s.push('\n');
    }
    write_text(&a.out, &s)
}

fn gen_synth(a: &GenArgs) -> Result<()> {
    let ds = gen_synthetic(a.series, a.steps, a.coupling, a.seed)?;
    write_csv(&ds, &a.out)
}

fn parse_sizes(spec: &str, d: usize) -> Result<Vec<(usize, usize, usize)>> {
    spec.split(',')
        .map(|item| {
            let (n, t) = item
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("size {item:?} is not of the form NxT")))?;
            let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Config(format!("bad size {item:?}")));
            Ok((parse(n)?, parse(t)?, d))
        })
        .collect()
}

fn bench(a: &BenchArgs) -> Result<()> {
    let sizes = parse_sizes(&a.sizes, a.d)?;
    let rows = mixer_cost_report(&sizes, a.k, a.token_cap, a.repeats, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let mut s = format!("{COST_CSV_HEADER}\n");
    for r in &rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    match &a.out {
        Some(p) => write_text(p, &s),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}

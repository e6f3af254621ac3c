use std::path::{Path, PathBuf};
use std::process::Command;

use mgcp::cli::{exit_code, run, EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use mgcp::Error;

const TINY: &str = "\
d = 8
d_l = 8
d_m = 8
d_k = 8
d_p = 8
k = 2
t_hist = 8
tau = 2
batch_size = 16
epochs_pretrain = 1
epochs_adv = 1
";

fn mgcp(args: &[&str]) -> i32 {
    run(std::iter::once("mgcp").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cfg.txt"), config).unwrap();
        assert_eq!(mgcp(&["gen-synth", "--series", "3", "--steps", "200", "--seed", "1", "--out", p(&dir.path().join("data.csv"))]), EXIT_OK);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, ckpt: &str) -> i32 {
        mgcp(&["train", "--config", p(&self.path("cfg.txt")), "--data", p(&self.path("data.csv")), "--checkpoint", p(&self.path(ckpt))])
    }
}

#[test]
fn gen_synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        assert_eq!(mgcp(&["gen-synth", "--series", "20", "--steps", "4000", "--seed", "7", "--out", p(out)]), EXIT_OK);
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 4001);
}

#[test]
fn untrained_checkpoint_evaluates_to_finite_metrics() {
    let fx = Fixture::new(&format!("{TINY}epochs_pretrain = 0\nepochs_adv = 0\n"));
    assert_eq!(fx.train("zero.ckpt"), EXIT_OK);
    let out = fx.path("metrics.csv");
    assert_eq!(mgcp(&["eval", "--checkpoint", p(&fx.path("zero.ckpt")), "--data", p(&fx.path("data.csv")), "--out", p(&out)]), EXIT_OK);
    let csv = std::fs::read_to_string(out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "forecaster,horizon,mae,rmse,mape_percent,n_points,n_masked");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let mae: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!(mae.is_finite() && mae > 0.0, "{row}");
    }
}

#[test]
fn training_is_reproducible_to_the_byte() {
    let fx = Fixture::new(TINY);
    assert_eq!(fx.train("a.ckpt"), EXIT_OK);
    assert_eq!(fx.train("b.ckpt"), EXIT_OK);
    assert_eq!(std::fs::read(fx.path("a.ckpt")).unwrap(), std::fs::read(fx.path("b.ckpt")).unwrap());
    let log = std::fs::read_to_string(fx.path("a.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,step,L_P,mse,L_R,adv,L_D,gp");
    assert!(log.lines().count() > 2);
}

#[test]
fn seed_flag_overrides_the_config() {
    let fx = Fixture::new(TINY);
    let args = |ckpt: &str, seed: &str| {
        mgcp(&["train", "--config", p(&fx.path("cfg.txt")), "--data", p(&fx.path("data.csv")), "--checkpoint", p(&fx.path(ckpt)), "--seed", seed])
    };
    assert_eq!(args("s1.ckpt", "1"), EXIT_OK);
    assert_eq!(args("s2.ckpt", "2"), EXIT_OK);
    assert_ne!(std::fs::read(fx.path("s1.ckpt")).unwrap(), std::fs::read(fx.path("s2.ckpt")).unwrap());
}

#[test]
fn forecast_writes_one_row_per_step() {
    let fx = Fixture::new(TINY);
    assert_eq!(fx.train("m.ckpt"), EXIT_OK);
    let out = fx.path("f.csv");
    assert_eq!(mgcp(&["forecast", "--checkpoint", p(&fx.path("m.ckpt")), "--data", p(&fx.path("data.csv")), "--out", p(&out)]), EXIT_OK);
    let text = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,timestamp,s0,s1,s2");
    assert_eq!(lines.len(), 3);
    // 200 five-minute steps from midnight end at 16:35
    assert!(lines[1].starts_with("1,2020-01-01 16:40:00,"));
    assert!(lines[2].split(',').skip(2).all(|v| v.parse::<f64>().unwrap().is_finite()));
}

#[test]
fn bench_mixers_emits_cost_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cost.csv");
    assert_eq!(mgcp(&["bench-mixers", "--sizes", "2x8,4x8", "--d", "8", "--k", "2", "--repeats", "1", "--out", p(&out)]), EXIT_OK);
    let text = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mixer,N,T,d,params,forward_ms,peak_bytes");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("attention,2,8,8,192,"));
    assert!(lines[3].starts_with("afno,2,8,8,80,"));
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let fx = Fixture::new(TINY);
    let data = fx.path("data.csv");
    assert_eq!(mgcp(&["train", "--frobnicate"]), EXIT_USAGE);
    assert_eq!(mgcp(&["nonsense"]), EXIT_USAGE);
    assert_eq!(mgcp(&["train", "--data", p(&fx.path("missing.csv")), "--checkpoint", p(&fx.path("x"))]), EXIT_IO);
    std::fs::write(fx.path("ragged.csv"), "a,b\n1,2\n3\n").unwrap();
    assert_eq!(mgcp(&["train", "--data", p(&fx.path("ragged.csv")), "--checkpoint", p(&fx.path("x"))]), EXIT_DATA);
    std::fs::write(fx.path("typo.txt"), "lamda = 0.1\n").unwrap();
    assert_eq!(mgcp(&["train", "--config", p(&fx.path("typo.txt")), "--data", p(&data), "--checkpoint", p(&fx.path("x"))]), EXIT_CONFIG);
    std::fs::write(fx.path("beta.txt"), format!("{TINY}beta = 2\n")).unwrap();
    assert_eq!(mgcp(&["train", "--config", p(&fx.path("beta.txt")), "--data", p(&data), "--checkpoint", p(&fx.path("x"))]), EXIT_CONFIG);
    std::fs::write(fx.path("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(mgcp(&["eval", "--checkpoint", p(&fx.path("junk.ckpt")), "--data", p(&data)]), EXIT_DATA);
    assert_eq!(exit_code(&Error::Diverged { batch: 3, last_finite: None }), EXIT_NUMERIC);
    assert_eq!(mgcp(&["--help"]), EXIT_OK);
}

#[test]
fn binary_reports_a_one_line_reason() {
    let out = Command::new(env!("CARGO_BIN_EXE_mgcp"))
        .args(["eval", "--checkpoint", "/nonexistent/ckpt", "--data", "/nonexistent/data.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_IO));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().filter(|l| l.starts_with("error:")).count(), 1, "{stderr}");
}

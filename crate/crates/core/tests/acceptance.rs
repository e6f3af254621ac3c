//! Acceptance criteria 1 to 9, one `criterion N: PASS|FAIL` line each.
//!
//! Runs without the libtest harness so the criteria execute one after another
//! (timing criteria need the core to themselves) and the lines are never captured.
//! Pass criterion numbers as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use mgcp::config::TrainConfig;
use mgcp::critic::gradient_penalty;
use mgcp::data::{gen_synthetic, make_covariates, split_and_window, CovariateKind, Splits};
use mgcp::eval::{evaluate, Evaluation};
use mgcp::graph::{Adjacency, GraphLearner};
use mgcp::mapper::{Dims, Mapper, MixerKind};
use mgcp::mixers::{mixer_cost_report, Afno, Fno, GlobalAttention};
use mgcp::nn::ParamStore;
use mgcp::tensor::fft::{naive_dft, radix2_fft, transform, Complex64, Sign};
use mgcp::tensor::{gradcheck, Tensor};
use mgcp::train::{Model, Trainer};
use rand::Rng;

mod common;
use common::{rand_t, rng};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ops = common::op_gradient_suite(1);
    let (worst_op, op_err) = ops.iter().fold(("", 0.0f64), |acc, (n, e)| if *e > acc.1 { (n, *e) } else { acc });

    // end-to-end generator loss on 2 series, T = 6, tau = 2
    let cfg = TrainConfig { k: 2, d: 4, d_l: 4, d_m: 4, d_k: 4, d_p: 4, t_hist: 6, tau: 2, ..TrainConfig::default() };
    let ds = gen_synthetic(2, 80, 0.5, 3).map_err(|e| e.to_string())?;
    let cov = make_covariates(&ds, cfg.covariates).map_err(|e| e.to_string())?;
    let splits = split_and_window(&ds, &cov, cfg.split, 6, 2, true).map_err(|e| e.to_string())?;
    let batch = splits.train.batch(&[0, 7, 19], &splits.stats).map_err(|e| e.to_string())?;
    let model = Model::new(&cfg, 2).map_err(|e| e.to_string())?;
    let ids: Vec<_> = model.store.ids().collect();
    let loss = |xs: &[Tensor]| -> mgcp::Result<Tensor> {
        let mut m = model.clone();
        for (id, t) in ids.iter().zip(xs) {
            m.store.bind(*id, t.clone())?;
        }
        Ok(m.generator_loss(&cfg, &batch)?.l_p)
    };
    let inputs = model.store.tensors(&ids);
    let check = gradcheck::check(&loss, &inputs, 1e-5).map_err(|e| e.to_string())?;
    // relative to the whole gradient vector; the graph learner's tensors carry
    // gradients near the f64 differencing floor at init, so per-tensor ratios are noise
    let scale = check.numeric.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut lp_err, mut kinks) = (0.0f64, 0);
    for (k, (a, n)) in check.analytic.iter().zip(&check.numeric).enumerate() {
        for (j, (x, y)) in a.data().iter().zip(n).enumerate() {
            let mut err = (x - y).abs() / scale;
            if err >= 1e-4 {
                // a soft-shrink threshold inside the step: difference again at 1e-6
                let at = |delta: f64| -> mgcp::Result<f64> {
                    let mut xs = inputs.clone();
                    let mut w = xs[k].to_vec();
                    w[j] += delta;
                    xs[k] = if xs[k].is_complex() { Tensor::from_interleaved(w, xs[k].shape())? } else { Tensor::from_vec(w, xs[k].shape())? };
                    Ok(loss(&xs)?.item())
                };
                let fine = (at(1e-6).map_err(|e| e.to_string())? - at(-1e-6).map_err(|e| e.to_string())?) / 2e-6;
                if (x - fine).abs() / scale < 1e-4 {
                    kinks += 1;
                    err = (x - fine).abs() / scale;
                }
            }
            lp_err = lp_err.max(err);
        }
    }
    let gp_err = common::gp_param_fd_error(15).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        op_err < 1e-4 && lp_err < 1e-4 && gp_err < 1e-3 && secs < 120.0,
        format!(
            "{} ops worst {op_err:.2e} ({worst_op}); L_P gradient over {} tensors {lp_err:.2e} ({kinks} entries straddled a kink at 1e-5 and were differenced at 1e-6); L_gp theta_d {gp_err:.2e}; {secs:.1}s",
            ops.len(),
            ids.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let sizes = [1usize, 2, 3, 4, 5, 6, 7, 8, 9, 12, 15, 16];
    let (mut round, mut linear, mut oracle) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = sizes[r.gen_range(0..sizes.len())];
        let t = sizes[r.gen_range(0..sizes.len())];
        let c = r.gen_range(1..4);
        let x = rand_t(&[n, t, c], &mut r);
        let y = rand_t(&[n, t, c], &mut r);
        let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        let run = || -> mgcp::Result<(f64, f64)> {
            let back = x.dft2()?.idft2()?;
            let rt = max_abs_diff(back.real()?.data(), x.data()).max(back.imag()?.max_abs());
            let lhs = x.scale(a).add(&y.scale(b))?.dft2()?;
            let rhs = x.dft2()?.scale(a).add(&y.dft2()?.scale(b))?;
            Ok((rt, max_abs_diff(lhs.data(), rhs.data())))
        };
        let (rt, lin) = run().map_err(|e| e.to_string())?;
        round = round.max(rt);
        linear = linear.max(lin);
    }
    for _ in 0..50 {
        let len = 1 << r.gen_range(0..8);
        let line: Vec<Complex64> = (0..len).map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect();
        let mut fast = line.clone();
        radix2_fft(&mut fast, Sign::Forward);
        let slow = naive_dft(&line, Sign::Forward);
        let mixed = transform(&line, Sign::Forward);
        for ((p, q), m) in fast.iter().zip(&slow).zip(&mixed) {
            oracle = oracle.max((p - q).norm()).max((m - q).norm());
        }
        let odd = sizes[r.gen_range(0..sizes.len())] * 3;
        let line: Vec<Complex64> = (0..odd).map(|_| Complex64::new(r.gen_range(-1.0..1.0), 0.0)).collect();
        for (m, q) in transform(&line, Sign::Backward).iter().zip(naive_dft(&line, Sign::Backward)) {
            oracle = oracle.max((m - q).norm());
        }
    }
    ensure(
        round < 1e-10 && linear < 1e-10 && oracle < 1e-10,
        format!("round trip {round:.1e}, linearity {linear:.1e}, fast vs naive {oracle:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let afno = Afno::new(&mut store, "afno", 8, 2, 0.01, &mut r).map_err(|e| e.to_string())?;
    let dims = Dims { d: 8, d_l: 4, d_m: 4, d_k: 4, d_p: 4, d_c: 1, k: 2, a: 0.01, layers: 2, beta: 0.5, mixer: MixerKind::Afno };
    let mapper = Mapper::new(&mut store, "mapper", &dims, &mut r).map_err(|e| e.to_string())?;
    let mut broken = 0;
    for _ in 0..100 {
        let (n, t, tau) = (r.gen_range(1..5), r.gen_range(1..10), r.gen_range(1..6));
        let z = rand_t(&[n, t + tau, 8], &mut r);
        let zp = Tensor::concat(&[&z.slice(1, 0, t).unwrap(), &rand_t(&[n, tau, 8], &mut r).scale(10.0)], 1).unwrap();
        let out = afno.forward_masked(&store, &z, t).map_err(|e| e.to_string())?;
        let outp = afno.forward_masked(&store, &zp, t).map_err(|e| e.to_string())?;
        let x = rand_t(&[n, t + tau, 1], &mut r);
        let xp = Tensor::concat(&[&x.slice(1, 0, t).unwrap(), &rand_t(&[n, tau, 1], &mut r).scale(10.0)], 1).unwrap();
        let lat = mapper.map_to_latent(&store, &x, t).map_err(|e| e.to_string())?;
        let latp = mapper.map_to_latent(&store, &xp, t).map_err(|e| e.to_string())?;
        let bits = |v: &Tensor| v.slice(1, 0, t).unwrap().data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        let same = bits(&out) == bits(&outp)
            && bits(&lat.h0) == bits(&latp.h0)
            && bits(&lat.h) == bits(&latp.h)
            && lat.adj.a.data().iter().map(|f| f.to_bits()).eq(latp.adj.a.data().iter().map(|f| f.to_bits()));
        if !same {
            broken += 1;
        }
    }
    ensure(broken == 0, format!("{broken} of 100 perturbations changed history outputs (AFNO, H0, H, A)"))
}

fn criterion_4() -> Outcome {
    let (mut sym, mut rows, mut neg, mut identity_ok, mut equivariant) = (0.0f64, 0.0f64, false, true, true);
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let n = r.gen_range(1..8);
        let beta = if seed % 10 == 0 { 1.0 } else { r.gen_range(0.0..1.0) };
        let mut store = ParamStore::new();
        let g = GraphLearner::new(&mut store, "g", 4, 5, 3, beta, &mut r).map_err(|e| e.to_string())?;
        let h = rand_t(&[n, 6, 4], &mut r);
        let adj = g.learn(&store, &h).map_err(|e| e.to_string())?;
        let a = adj.a.data();
        for i in 0..n {
            rows = rows.max((adj.a_tilde.data()[i * n..(i + 1) * n].iter().sum::<f64>() - 1.0).abs());
            for j in 0..n {
                sym = sym.max((a[i * n + j] - a[j * n + i]).abs());
                neg |= a[i * n + j] < 0.0;
            }
        }
        if beta == 1.0 {
            identity_ok &= adj.a.data() == Tensor::eye(n).data() && adj.norm.data() == Tensor::eye(n).data();
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left(n / 3);
        let parts: Vec<Tensor> = perm.iter().map(|&p| h.slice(0, p, 1).unwrap()).collect();
        let hp = Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0).unwrap();
        let adjp = g.learn(&store, &hp).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..n {
                let (src, dst) = (perm[i] * n + perm[j], i * n + j);
                equivariant &= adjp.a.data()[dst].to_bits() == a[src].to_bits();
                equivariant &= adjp.norm.data()[dst].to_bits() == adj.norm.data()[src].to_bits();
            }
        }
    }
    let singular = matches!(Adjacency::from_similarity(&Tensor::zeros(&[2, 2]), 0.0), Err(mgcp::Error::SingularDegree { .. }));
    ensure(
        sym < 1e-12 && rows < 1e-12 && !neg && identity_ok && equivariant && singular,
        format!(
            "50 graphs: symmetry {sym:.1e}, row sums {rows:.1e}, nonnegative {}, beta=1 gives I {identity_ok}, permutation-exact {equivariant}",
            !neg
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let mut linear = 0.0f64;
    for seed in 0..10 {
        let c = rand_t(&[1, 3, 4, 1], &mut r);
        let c = c.scale(1.0 / c.data().iter().map(|v| v * v).sum::<f64>().sqrt());
        let f = |x: &Tensor| x.mul(&c)?.sum_axis(3)?.sum_axis(2)?.sum_axis(1)?.reshape(&[x.dim(0)]);
        let gp = gradient_penalty(&f, &rand_t(&[4, 3, 4, 1], &mut r), &rand_t(&[4, 3, 4, 1], &mut r), &mut rng(seed)).map_err(|e| e.to_string())?;
        linear = linear.max(gp.item());
    }
    let zero = |x: &Tensor| x.scale(0.0).sum_axis(3)?.sum_axis(2)?.sum_axis(1)?.reshape(&[x.dim(0)]);
    let gp0 = gradient_penalty(&zero, &rand_t(&[4, 3, 4, 1], &mut r), &rand_t(&[4, 3, 4, 1], &mut r), &mut rng(0))
        .map_err(|e| e.to_string())?
        .item();
    let (first, gap) = common::point_mass_run(200, 0).map_err(|e| e.to_string())?;
    ensure(
        linear < 1e-10 && (gp0 - 1.0).abs() < 1e-12 && first.is_some(),
        format!(
            "unit linear critic L_gp {linear:.1e}; zero critic L_gp - 1 = {:.1e}; point masses positive from step {} (gap {gap:.3} at 200)",
            gp0 - 1.0,
            first.map_or("never".to_string(), |s| s.to_string())
        ),
    )
}

/// Criterion-6 setup: defaults, with every 24th training window per epoch in batches of 8.
fn synthetic_config(seed: u64) -> TrainConfig {
    TrainConfig { seed, train_stride: 24, batch_size: 8, ..TrainConfig::default() }
}

fn synthetic_splits() -> &'static Splits {
    static SPLITS: OnceLock<Splits> = OnceLock::new();
    SPLITS.get_or_init(|| {
        let ds = gen_synthetic(20, 4000, 0.8, 0).unwrap();
        let cov = make_covariates(&ds, CovariateKind::MinuteHour).unwrap();
        split_and_window(&ds, &cov, [0.7, 0.2, 0.1], 24, 6, true).unwrap()
    })
}

/// Trains on the synthetic set and scores every test window.
fn synthetic_run(cfg: TrainConfig) -> mgcp::Result<(Evaluation, f64)> {
    let splits = synthetic_splits();
    let start = Instant::now();
    let mut tr = Trainer::new(cfg, 2)?;
    let total = tr.total_epochs();
    tr.train_until(splits, total)?;
    let secs = start.elapsed().as_secs_f64();
    let ev = evaluate(&tr.model, &splits.test, &splits.stats, tr.cfg.pad, 64, 1)?;
    Ok((ev, secs))
}

fn full_seed0() -> &'static Result<(Evaluation, f64), String> {
    static RUN: OnceLock<Result<(Evaluation, f64), String>> = OnceLock::new();
    RUN.get_or_init(|| synthetic_run(synthetic_config(0)).map_err(|e| e.to_string()))
}

fn criterion_6() -> Outcome {
    let (ev, secs) = full_seed0().clone()?;
    let gain = ev.mae_improvement();
    ensure(
        gain >= 0.20 && secs < 900.0,
        format!(
            "test MAE {:.4} vs persistence {:.4} ({:.1}% better, need 20%) over {} windows; trained in {secs:.0}s",
            ev.model.overall.mae,
            ev.persistence.overall.mae,
            100.0 * gain,
            ev.windows
        ),
    )
}

fn criterion_7() -> Outcome {
    let variants: [(&str, fn(&mut TrainConfig)); 3] = [("full", |_| {}), ("beta=1", |c| c.beta = 1.0), ("identity mixer", |c| c.mixer = MixerKind::Identity)];
    let mut means = Vec::new();
    let mut lines = Vec::new();
    for (name, tweak) in variants {
        let mut maes = Vec::new();
        for seed in 0..3 {
            let mae = if name == "full" && seed == 0 {
                full_seed0().clone()?.0.model.overall.mae
            } else {
                let mut cfg = synthetic_config(seed);
                tweak(&mut cfg);
                synthetic_run(cfg).map_err(|e| e.to_string())?.0.model.overall.mae
            };
            maes.push(mae);
        }
        let mean = maes.iter().sum::<f64>() / 3.0;
        lines.push(format!("{name} {mean:.4} [{:.4} {:.4} {:.4}]", maes[0], maes[1], maes[2]));
        means.push(mean);
    }
    let (d_graph, d_mixer) = (means[1] - means[0], means[2] - means[0]);
    ensure(
        d_graph > 0.0 && d_mixer > 0.0,
        format!("mean test MAE {}; delta beta=1 {d_graph:+.4}, delta identity {d_mixer:+.4}", lines.join(", ")),
    )
}

fn criterion_8() -> Outcome {
    let d = 32;
    let k = 4;
    let mut r = rng(8);
    let sizes = [(16, 64, d), (32, 64, d)];
    let rows = mixer_cost_report(&sizes, k, 1 << 14, 5, &mut r).map_err(|e| e.to_string())?;
    let mut counts_ok = true;
    for row in &rows {
        let want = match row.mixer {
            "attention" => GlobalAttention::param_count(d),
            "fno" => Fno::param_count(row.n, row.t, d),
            _ => Afno::param_count(d, k),
        };
        counts_ok &= row.params == want;
    }
    counts_ok &= GlobalAttention::param_count(d) == 3 * d * d
        && Fno::param_count(16, 64, d) == 16 * 64 * d * d
        && Afno::param_count(d, k) == 2 * k * (d / k) * (d / k) + 2 * k * (d / k);
    let time = |mixer: &str, n: usize| rows.iter().find(|r| r.mixer == mixer && r.n == n).unwrap().forward_ms;
    let attn = time("attention", 32) / time("attention", 16);
    let afno = time("afno", 32) / time("afno", 16);
    ensure(
        counts_ok && attn >= 3.0 && afno < 2.5,
        format!(
            "closed-form counts match {counts_ok}; N*T 1024 -> 2048 at d=32: attention x{attn:.2} ({:.1} -> {:.1} ms), AFNO x{afno:.2} ({:.2} -> {:.2} ms)",
            time("attention", 16),
            time("attention", 32),
            time("afno", 16),
            time("afno", 32)
        ),
    )
}

fn criterion_9() -> Outcome {
    let cfg = TrainConfig { k: 2, d: 8, d_l: 8, d_m: 8, d_k: 8, d_p: 8, t_hist: 8, tau: 2, batch_size: 8, epochs_pretrain: 2, epochs_adv: 3, train_stride: 2, ..TrainConfig::default() };
    let ds = gen_synthetic(3, 200, 0.8, 9).map_err(|e| e.to_string())?;
    let cov = make_covariates(&ds, cfg.covariates).map_err(|e| e.to_string())?;
    let splits = split_and_window(&ds, &cov, cfg.split, cfg.t_hist, cfg.tau, true).map_err(|e| e.to_string())?;
    let run = || -> mgcp::Result<(bool, usize)> {
        let mut straight = Trainer::new(cfg.clone(), 2)?;
        straight.train_until(&splits, 5)?;
        let dir = tempfile::tempdir()?;
        let mut all_same = true;
        for cut in [1, 3] {
            let mut first = Trainer::new(cfg.clone(), 2)?;
            first.train_until(&splits, cut)?;
            let path = dir.path().join(format!("cut{cut}.mgcp"));
            first.save(&path)?;
            let mut resumed = Trainer::load(&path)?;
            resumed.train_until(&splits, 5)?;
            let mut log = first.log.clone();
            log.extend(resumed.log);
            all_same &= log.len() == straight.log.len() && log.iter().zip(&straight.log).all(|(a, b)| a.same_bits(b));
        }
        Ok((all_same, straight.log.len()))
    };
    let (same, rows) = run().map_err(|e| e.to_string())?;
    ensure(same, format!("resumed after epochs 1 and 3 of 5: {rows} log rows bit-identical {same}"))
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", criterion_1),
        (2, "DFT correctness", criterion_2),
        (3, "masked AFNO causality", criterion_3),
        (4, "adjacency invariants", criterion_4),
        (5, "WGAN-gp oracle", criterion_5),
        (6, "end-to-end synthetic forecast", criterion_6),
        (7, "ablation direction", criterion_7),
        (8, "mixer cost", criterion_8),
        (9, "checkpoint determinism", criterion_9),
    ];
    let mut failed = Vec::new();
    for (n, title, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS {title}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("criterion {n} FAIL {title}: {detail} [{secs:.1}s]");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}

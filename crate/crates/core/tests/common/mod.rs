#![allow(dead_code)]

use mgcp::nn::{ParamId, ParamStore};
use mgcp::tensor::{gradcheck, Tensor};
use mgcp::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_t(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, r)
}

/// Finite-difference check of `f(store, extra)` with respect to `extra` and the
/// parameters `ids`. Returns the largest relative error.
pub fn fd_check(
    store: &ParamStore,
    ids: &[ParamId],
    extra: &[Tensor],
    step: f64,
    f: &dyn Fn(&ParamStore, &[Tensor]) -> Result<Tensor>,
) -> Result<f64> {
    let mut inputs = extra.to_vec();
    inputs.extend(store.tensors(ids));
    let k = extra.len();
    let wrapped = |xs: &[Tensor]| -> Result<Tensor> {
        let mut s = store.clone();
        for (id, t) in ids.iter().zip(&xs[k..]) {
            s.bind(*id, t.clone())?;
        }
        f(&s, &xs[..k])
    };
    Ok(gradcheck::check(&wrapped, &inputs, step)?.max_rel_error())
}

/// Critic trained alone on `+1` (real) against `-1` (fake) future windows with the
/// default critic hyperparameters, 20 series, `T = 24`, `tau = 6`, zero history and
/// covariates. Returns the first step whose `E[Y] - E[Y^]` is positive and the final gap.
pub fn point_mass_run(steps: usize, seed: u64) -> mgcp::Result<(Option<usize>, f64)> {
    use mgcp::config::TrainConfig;
    use mgcp::critic::{discriminator_loss, gradient_penalty, Condition, Critic};
    use mgcp::graph::Adjacency;
    use mgcp::tensor::backward;
    use mgcp::train::Adam;

    let cfg = TrainConfig::default();
    let (n, t, tau, d_c) = (20, 24, 6, 2);
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let critic = Critic::new(&mut store, "critic", d_c, cfg.d_p, &mut r);
    let x_hist = Tensor::zeros(&[2, n, t, 1]);
    let v = Tensor::zeros(&[2, n, t + tau, d_c]);
    let adj = Adjacency::identity(n);
    let score = |st: &ParamStore, x: &Tensor| critic.score(st, x, Condition { x_hist: &x_hist, v: &v }, &adj);
    let real = Tensor::ones(&[2, n, tau, 1]);
    let fake = real.neg();
    let ids: Vec<_> = store.ids().collect();
    let mut opt = Adam::new(&store, ids.clone(), cfg.lr_d);
    let gap = |st: &ParamStore| -> mgcp::Result<f64> { Ok(score(st, &real)?.mean()?.item() - score(st, &fake)?.mean()?.item()) };
    let mut first_positive = None;
    for step in 1..=steps {
        let y_real = score(&store, &real)?.mean()?;
        let y_fake = score(&store, &fake)?.mean()?;
        let f = |x: &Tensor| score(&store, x);
        let gp = gradient_penalty(&f, &real, &fake, &mut r)?;
        let l_d = discriminator_loss(&y_real, &y_fake, &gp, cfg.alpha)?;
        let grads = backward(&l_d, &store.tensors(&ids), false)?.grads;
        opt.step(&mut store, &grads)?;
        if first_positive.is_none() && gap(&store)? > 0.0 {
            first_positive = Some(step);
        }
    }
    Ok((first_positive, gap(&store)?))
}

type Unary = fn(&Tensor) -> Result<Tensor>;
type Check<'a> = (&'static str, Box<dyn Fn(&[Tensor]) -> Result<Tensor> + 'a>, Vec<Tensor>);

/// Largest relative finite-difference error (step 1e-5) of every differentiable
/// tensor op, each wrapped in a reduction that keeps gradients non-trivial.
pub fn op_gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let wsum = rand_t(&[3, 4], &mut r);
    let reduce = move |t: Tensor| -> Result<Tensor> { t.mul(&wsum)?.sum() };

    let unaries: Vec<(&'static str, Unary)> = vec![
        ("exp", |x| Ok(x.exp())),
        ("tanh", |x| Ok(x.tanh())),
        ("sigmoid", |x| Ok(x.sigmoid())),
        ("relu", |x| Ok(x.relu())),
        ("gelu", |x| Ok(x.gelu())),
        ("neg", |x| Ok(x.neg())),
        ("scale", |x| Ok(x.scale(-2.5))),
        ("add_scalar", |x| Ok(x.add_scalar(0.7))),
        ("ln", |x| Ok(x.mul(x)?.add_scalar(0.5).ln())),
        ("sqrt", |x| Ok(x.mul(x)?.add_scalar(0.5).sqrt())),
        ("softmax0", |x| x.softmax(0)),
        ("softmax1", |x| x.softmax(-1)),
        ("soft_shrink", |x| x.soft_shrink(0.2)),
        ("clamp_min", |x| Ok(x.clamp_min(0.1))),
        ("transpose", |x| x.transpose_last()?.transpose_last()),
        ("reshape", |x| x.reshape(&[4, 3])?.reshape(&[3, 4])),
        ("slice_pad", |x| x.slice(1, 1, 2)?.pad(1, 1, 4)),
        ("sum_axis", |x| x.sum_axis(1)?.broadcast_to(&[3, 4])),
        ("mean_axis", |x| x.mean_axis(0)?.broadcast_to(&[3, 4])),
        ("square", |x| x.square()),
    ];
    let mut checks: Vec<Check> = Vec::new();
    for (name, op) in unaries {
        let reduce = reduce.clone();
        checks.push((name, Box::new(move |a: &[Tensor]| reduce(op(&a[0])?)), vec![rand_t(&[3, 4], &mut r)]));
    }
    let (r1, r2, r3, r4, r5) = (reduce.clone(), reduce.clone(), reduce.clone(), reduce.clone(), reduce.clone());
    let mut push = |name, f: Box<dyn Fn(&[Tensor]) -> Result<Tensor>>, shapes: &[&[usize]]| {
        let inputs = shapes.iter().map(|s| rand_t(s, &mut r)).collect();
        checks.push((name, f, inputs));
    };
    push("add_broadcast", Box::new(move |a| r1(a[0].add(&a[1])?)), &[&[3, 4], &[4]]);
    push("sub", Box::new(move |a| r2(a[0].sub(&a[1])?)), &[&[3, 4], &[3, 1]]);
    push("mul", Box::new(move |a| r3(a[0].mul(&a[1])?)), &[&[3, 4], &[3, 4]]);
    push("div", Box::new(move |a| r4(a[0].div(&a[1].square()?.add_scalar(1.0))?)), &[&[3, 4], &[1, 4]]);
    push("matmul", Box::new(move |a| r5(a[0].matmul(&a[1])?)), &[&[3, 5], &[5, 4]]);
    push("batched_matmul", Box::new(|a| a[0].matmul(&a[1])?.tanh().sum()), &[&[2, 3, 4], &[4, 2]]);
    push("batched_matmul_both", Box::new(|a| a[0].matmul(&a[1])?.tanh().sum()), &[&[2, 3, 4], &[2, 4, 2]]);
    push("permute", Box::new(|a| a[0].permute(&[2, 0, 1])?.tanh().mul(&a[1])?.sum()), &[&[2, 3, 4], &[4, 2, 3]]);
    push("concat", Box::new(move |a| reduce(Tensor::concat(&[&a[0], &a[1]], 1)?)), &[&[3, 1], &[3, 3]]);
    push("mse", Box::new(|a| a[0].mse(&a[1])), &[&[3, 4], &[3, 4]]);
    push("norm", Box::new(|a| a[0].norm_from(1)?.tanh().sum()), &[&[3, 4]]);
    push(
        "complex_split_join",
        Box::new(|a| {
            let w = Tensor::complex(&a[0], &a[1])?.scale(1.5);
            w.real()?.mul(&w.imag()?)?.sum()
        }),
        &[&[3, 4], &[3, 4]],
    );
    push(
        "dft2_idft2",
        Box::new(|a| {
            let y = a[0].dft2()?;
            let p = y.real()?.tanh().mul(&y.imag()?)?;
            let z = Tensor::complex(&p, &y.real()?)?.idft2()?;
            z.real()?.mul(&z.real()?)?.add(&z.imag()?)?.sum()
        }),
        &[&[3, 4, 2]],
    );
    checks
        .into_iter()
        .map(|(name, f, inputs)| (name, gradcheck::check(&*f, &inputs, 1e-5).unwrap().max_rel_error()))
        .collect()
}

/// Relative error of `dL_gp / d theta_d` against central differences on a
/// one-series, `tau = 2` critic, over every 7th entry of each parameter.
pub fn gp_param_fd_error(seed: u64) -> mgcp::Result<f64> {
    use mgcp::critic::{gradient_penalty, Condition, Critic};
    use mgcp::graph::Adjacency;
    use mgcp::tensor::backward;

    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let critic = Critic::new(&mut store, "critic", 1, 4, &mut r);
    let x_hist = rand_t(&[2, 1, 4, 1], &mut r);
    let v = rand_t(&[2, 1, 6, 1], &mut r);
    let adj = Adjacency::identity(1);
    let (real, fake) = (rand_t(&[2, 1, 2, 1], &mut r), rand_t(&[2, 1, 2, 1], &mut r));
    let gp_of = |st: &ParamStore| -> mgcp::Result<Tensor> {
        let f = |x: &Tensor| critic.score(st, x, Condition { x_hist: &x_hist, v: &v }, &adj);
        // same interpolation draws on every evaluation
        gradient_penalty(&f, &real, &fake, &mut rng(seed + 1))
    };
    let ids: Vec<_> = store.ids().collect();
    let grads = backward(&gp_of(&store)?, &store.tensors(&ids), false)?.grads;
    let h = 1e-5;
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for (k, id) in ids.iter().enumerate() {
        let base = store.get(*id).to_vec();
        for j in (0..base.len()).step_by(7) {
            let eval = |delta: f64| -> mgcp::Result<f64> {
                let mut st = store.clone();
                let mut w = base.clone();
                w[j] += delta;
                st.set(*id, Tensor::from_vec(w, store.get(*id).shape())?)?;
                Ok(gp_of(&st)?.item())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max((grads[k].data()[j] - numeric).abs());
            scale = scale.max(numeric.abs());
        }
    }
    Ok(worst / scale)
}

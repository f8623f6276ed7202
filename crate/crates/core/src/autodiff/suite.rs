//! The standard gradient-check cases: every differentiable op, each block,
//! and a micro model under cross-entropy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backbone::{build_model, ModelConfig};
use crate::blocks::{
    AblationFlags, AsaParams, CraParams, GigParams, GpeBlockParams, GpmConfig, GpmParams, IrbParams, LsaeParams,
    NORM_EPS,
};
use crate::error::Result;
use crate::params::{seeded_rng, ParamBuilder, ParamStore};
use crate::tensor::{window_partition, Activation, Conv2dSpec, NormKind, NormMode, StripAxis, Tensor};

use super::gradcheck::CheckCase;
use super::session::Session;

/// Kinks of the piecewise activations.
const KINKS: [f64; 4] = [-3.0, 0.0, 3.0, 6.0];

/// Coordinates sampled per tensor in the end-to-end model check.
pub const MODEL_SAMPLES_PER_TENSOR: usize = 3;

fn normal(rng: &mut ChaCha8Rng, dims: &[usize], std: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    let data = (0..n).map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>();
    Tensor::from_vec(dims.to_vec(), data).expect("valid dims")
}

/// Uniform in `[lo, hi)`, resampling anything within `margin` of a kink.
fn away_from_kinks(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64, margin: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if KINKS.iter().all(|k| (v - k).abs() > margin) {
                break v;
            }
        })
        .collect::<Vec<f64>>();
    Tensor::from_vec(dims.to_vec(), data).expect("valid dims")
}

/// Builds parameters, then jitters every learnable entry so no bias or norm
/// affine sits at its special initial value.
fn build<P>(
    rng: &mut ChaCha8Rng,
    seed: u64,
    f: impl FnOnce(&mut ParamBuilder<'_, f64>) -> Result<P>,
) -> Result<(ParamStore<f64>, P)> {
    let mut store = ParamStore::new();
    let mut init = seeded_rng(seed);
    let p = f(&mut ParamBuilder::new(&mut store, &mut init))?;
    let ids: Vec<_> = store.learnable().map(|(id, _)| id).collect();
    for id in ids {
        let jitter = normal(rng, store.get(id).dims(), 0.1);
        let v = store.get(id).add(&jitter)?;
        store.set(id, v)?;
    }
    Ok((store, p))
}

fn op_cases(seed: u64, eps: f64) -> Result<Vec<CheckCase>> {
    let mut rng = seeded_rng(seed);
    let r = &mut rng;
    let margin = 10.0 * eps;
    let mut cases = vec![
        CheckCase::new("conv2d", |s, v| s.conv2d(&v[0], &v[1], Some(&v[2]), Conv2dSpec::same(3, 3, 1)))
            .input("x", normal(r, &[1, 2, 4, 4], 1.0))
            .input("weight", normal(r, &[3, 2, 3, 3], 0.5))
            .input("bias", normal(r, &[3], 0.5)),
        CheckCase::new("conv2d/grouped-strided", |s, v| s.conv2d(&v[0], &v[1], None, Conv2dSpec::new(2, 1, 2)))
            .input("x", normal(r, &[2, 4, 5, 5], 1.0))
            .input("weight", normal(r, &[4, 2, 3, 3], 0.5)),
        CheckCase::new("conv2d/depthwise-strip", |s, v| {
            s.conv2d(&v[0], &v[1], Some(&v[2]), Conv2dSpec { stride: (1, 1), padding: (1, 0), groups: 3 })
        })
        .input("x", normal(r, &[2, 3, 6, 1], 1.0))
        .input("weight", normal(r, &[3, 1, 3, 1], 0.5))
        .input("bias", normal(r, &[3], 0.5)),
    ];

    let norms = [
        ("normalize/batch-train", NormKind::Batch, NormMode::Train, [2, 3, 3, 3]),
        ("normalize/batch-infer", NormKind::Batch, NormMode::Infer, [2, 3, 3, 3]),
        ("normalize/layer", NormKind::Layer, NormMode::Train, [2, 6, 3, 3]),
        ("normalize/group", NormKind::Group(3), NormMode::Train, [2, 6, 3, 3]),
    ];
    for (name, kind, mode, dims) in norms {
        let c = dims[1];
        let running = (normal(r, &[c], 0.5), normal(r, &[c], 0.3).map(|v| 0.5 + v.abs()));
        cases.push(
            CheckCase::new(name, move |s, v| {
                let run = (kind == NormKind::Batch).then_some((&running.0, &running.1));
                Ok(s.normalize(&v[0], &v[1], &v[2], kind, run, mode, NORM_EPS)?.0)
            })
            .input("x", normal(r, &dims, 1.0))
            .input("scale", normal(r, &[c], 0.5).map(|v| 1.0 + v))
            .input("shift", normal(r, &[c], 0.5))
            .with_mode(mode),
        );
    }

    for act in [Activation::Sigmoid, Activation::HSwish, Activation::Relu6, Activation::Silu] {
        cases.push(
            CheckCase::new(format!("activation/{act:?}").to_lowercase(), move |s, v| Ok(s.activation(&v[0], act)))
                .input("x", away_from_kinks(r, &[2, 3, 4, 4], -8.0, 8.0, margin)),
        );
    }

    let x4 = |r: &mut ChaCha8Rng| normal(r, &[2, 3, 4, 5], 1.0);
    cases.extend([
        CheckCase::new("strip_pool/height", |s, v| s.strip_pool(&v[0], StripAxis::Height)).input("x", x4(r)),
        CheckCase::new("strip_pool/width", |s, v| s.strip_pool(&v[0], StripAxis::Width)).input("x", x4(r)),
        CheckCase::new("global_avg_pool", |s, v| s.global_avg_pool(&v[0])).input("x", x4(r)),
        CheckCase::new("softmax", |s, v| s.softmax(&v[0])).input("x", normal(r, &[2, 3, 5], 2.0)),
        CheckCase::new("matmul", |s, v| s.matmul(&v[0], &v[1]))
            .input("a", normal(r, &[2, 3, 4], 1.0))
            .input("b", normal(r, &[2, 4, 5], 1.0)),
        CheckCase::new("transpose", |s, v| s.transpose_last2(&v[0])).input("x", normal(r, &[2, 3, 4], 1.0)),
        CheckCase::new("reshape", |s, v| s.reshape(&v[0], &[6, 20])).input("x", x4(r)),
        CheckCase::new("concat", |s, v| s.concat(&[&v[0], &v[1]], 1))
            .input("a", normal(r, &[2, 2, 3, 3], 1.0))
            .input("b", normal(r, &[2, 3, 3, 3], 1.0)),
        CheckCase::new("split", |s, v| {
            let parts = s.split(&v[0], 2, &[1, 3])?;
            s.concat(&[&parts[1], &parts[0]], 2)
        })
        .input("x", x4(r)),
        CheckCase::new("mul_broadcast", |s, v| s.mul_broadcast(&v[0], &v[1]))
            .input("x", x4(r))
            .input("gate", normal(r, &[2, 3, 4, 1], 1.0)),
        CheckCase::new("add", |s, v| s.add(&v[0], &v[1])).input("a", x4(r)).input("b", x4(r)),
        CheckCase::new("mul", |s, v| s.mul(&v[0], &v[1])).input("a", x4(r)).input("b", x4(r)),
        CheckCase::new("scale", |s, v| Ok(s.scale(&v[0], -1.7))).input("x", x4(r)),
        CheckCase::new("sum", |s, v| Ok(s.sum(&v[0]))).input("x", x4(r)),
        CheckCase::new("window_partition", |s, v| Ok(s.window_partition(&v[0], 4, 4)?.0))
            .input("x", normal(r, &[2, 3, 5, 6], 1.0)),
        CheckCase::new("linear", |s, v| s.linear(&v[0], &v[1], Some(&v[2])))
            .input("x", normal(r, &[3, 4], 1.0))
            .input("weight", normal(r, &[5, 4], 0.5))
            .input("bias", normal(r, &[5], 0.5)),
    ]);

    let (_, pad) = window_partition(&Tensor::<f64>::zeros(vec![2, 3, 5, 6])?, 4, 4)?;
    let windows = pad.windows_shape();
    cases.push(
        CheckCase::new("window_merge", move |s, v| s.window_merge(&v[0], &pad)).input("windows", normal(r, &windows, 1.0)),
    );

    let labels = vec![0, 3, 1];
    cases.push(
        CheckCase::new("cross_entropy", move |s, v| s.cross_entropy(&v[0], &labels, 0.1))
            .input("logits", normal(r, &[3, 4], 1.5)),
    );
    Ok(cases)
}

fn block_cases(seed: u64) -> Result<Vec<CheckCase>> {
    let mut rng = seeded_rng(seed.wrapping_add(17));
    let r = &mut rng;
    let mut cases = Vec::new();

    let (store, p) = build(r, seed, |b| GigParams::new(b, "gig", 4, 7))?;
    cases.push(
        CheckCase::new("block/gig", move |s, v| p.forward(s, &v[0]))
            .input("x", normal(r, &[2, 4, 6, 5], 1.0))
            .with_store(store),
    );

    let (store, p) = build(r, seed, |b| LsaeParams::new(b, "lsae", 4, (4, 4), 1, true))?;
    cases.push(
        CheckCase::new("block/lsae", move |s, v| p.forward(s, &v[0]))
            .input("x", normal(r, &[1, 4, 8, 8], 1.0))
            .with_store(store),
    );

    let (store, p) = build(r, seed, |b| LsaeParams::new(b, "lsae", 4, (4, 4), 2, true))?;
    cases.push(
        CheckCase::new("block/lsae-padded-2heads", move |s, v| p.forward(s, &v[0]))
            .input("x", normal(r, &[2, 4, 6, 7], 1.0))
            .with_store(store),
    );

    let (store, p) = build(r, seed, |b| AsaParams::new(b, "asa", 6))?;
    cases.push(
        CheckCase::new("block/asa", move |s, v| p.forward(s, &v[0]))
            .input("x", normal(r, &[2, 6, 4, 5], 1.0))
            .with_store(store),
    );

    let (store, p) = build(r, seed, |b| CraParams::new(b, "cra", 8))?;
    cases.push(
        CheckCase::new("block/cra", move |s, v| p.forward(s, &v[0]))
            .input("x", normal(r, &[2, 8, 3, 3], 1.0))
            .with_store(store),
    );

    for (name, cin, cout, stride) in [("block/irb", 4, 4, 1), ("block/irb-strided", 4, 6, 2)] {
        let (store, p) = build(r, seed, |b| IrbParams::new(b, "irb", cin, cout, 2, stride))?;
        cases.push(
            CheckCase::new(name, move |s, v| p.forward(s, &v[0]))
                .input("x", normal(r, &[2, cin, 5, 5], 1.0))
                .with_store(store),
        );
    }

    let gpm = GpmConfig { channels: 8, gig_kernel: 3, window: (4, 4), heads: 1, expansion: 2, flags: AblationFlags::default() };
    let (store, p) = build(r, seed, |b| GpmParams::new(b, "gpm", gpm))?;
    cases.push(
        CheckCase::new("block/gpm", move |s, v| p.forward(s, &v[0]))
            .input("x", normal(r, &[2, 8, 5, 5], 1.0))
            .with_store(store),
    );
    let (store, p) = build(r, seed, |b| GpeBlockParams::new(b, "gpe", gpm))?;
    cases.push(
        CheckCase::new("block/gpe", move |s, v| p.forward(s, &v[0]))
            .input("x", normal(r, &[2, 8, 5, 5], 1.0))
            .with_store(store),
    );
    Ok(cases)
}

/// Every op and block case for one seed. Inputs to piecewise activations are
/// drawn at least `10 * eps` away from their kinks.
pub fn gradcheck_suite(seed: u64, eps: f64) -> Result<Vec<CheckCase>> {
    let mut cases = op_cases(seed, eps)?;
    cases.extend(block_cases(seed)?);
    Ok(cases)
}

/// The micro model with a two-sample batch under cross-entropy, checked on
/// a few coordinates of every input and parameter tensor.
///
/// Inputs and parameter jitter are redrawn until every activation input of
/// the base pass lies more than `10 * eps` from a kink.
pub fn micro_model_case(seed: u64, eps: f64) -> Result<CheckCase> {
    let cfg = ModelConfig::micro();
    let model = build_model::<f64>(&cfg, seed)?;
    let mut rng = seeded_rng(seed.wrapping_add(29));
    let [h, w] = cfg.input_size;
    loop {
        let mut store = model.store.clone();
        let ids: Vec<_> = store.learnable().map(|(id, _)| id).collect();
        for id in ids {
            let v = store.get(id).add(&normal(&mut rng, store.get(id).dims(), 0.05))?;
            store.set(id, v)?;
        }
        let x = normal(&mut rng, &[2, 3, h, w], 1.0);
        let margin = {
            let s = Session::with_tracking(&store, NormMode::Train, false);
            s.start_kink_log();
            model.forward(&s, &s.input(x.clone()))?;
            s.take_kink_log().min_distance
        };
        if margin <= 10.0 * eps {
            continue;
        }
        let labels = vec![0, 1];
        let m = model.clone();
        return Ok(CheckCase::new("model/micro", move |s, v| {
            let logits = m.forward(s, &v[0])?;
            s.cross_entropy(&logits, &labels, 0.1)
        })
        .input("x", x)
        .with_store(store)
        .with_sample(MODEL_SAMPLES_PER_TENSOR));
    }
}

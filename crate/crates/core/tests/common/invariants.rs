//! Structural checks shared by the property tests and the acceptance report.
//! Each returns a measurement rather than asserting, so callers decide.

use hgpe::autodiff::Session;
use hgpe::backbone::{build_model, model_forward, ModelConfig};
use hgpe::blocks::{run_once, AblationFlags, GpeBlockParams, GpmConfig, GpmParams, LsaeParams};
use hgpe::params::{seeded_rng, ParamBuilder, ParamKind, ParamStore};
use hgpe::tensor::{concat_axis, split_axis, window_merge, window_partition, NormMode};
use hgpe::Tensor;
use rand::Rng;

use super::{random_tensor, randomize_store};

/// Window sizes exercised by the partition roundtrip.
pub const ROUNDTRIP_WINDOWS: [usize; 3] = [4, 7, 14];

/// `(h, w, window)` triples in `[1, 40]^2 x ROUNDTRIP_WINDOWS` whose
/// partition followed by merge does not reproduce the input bit for bit.
pub fn window_roundtrip_failures() -> Vec<(usize, usize, usize)> {
    let mut rng = seeded_rng(11);
    let mut bad = Vec::new();
    for h in 1..=40 {
        for w in 1..=40 {
            let x = random_tensor(&mut rng, &[2, 3, h, w]);
            for win in ROUNDTRIP_WINDOWS {
                let ok = window_partition(&x, win, win)
                    .and_then(|(p, pad)| window_merge(&p, &pad))
                    .map(|y| y.dims() == x.dims() && y.data() == x.data())
                    .unwrap_or(false);
                if !ok {
                    bad.push((h, w, win));
                }
            }
        }
    }
    bad
}

/// Random shapes and axes whose split followed by concat is not bit-exact.
pub fn split_concat_failures(cases: usize, seed: u64) -> usize {
    let mut rng = seeded_rng(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let dims: Vec<usize> = (0..4).map(|_| rng.gen_range(1..=6)).collect();
        let axis = rng.gen_range(0..4);
        let mut sizes = Vec::new();
        let mut left = dims[axis];
        while left > 0 {
            let s = rng.gen_range(1..=left);
            sizes.push(s);
            left -= s;
        }
        let x = random_tensor(&mut rng, &dims);
        let parts = split_axis(&x, axis, &sizes).unwrap();
        let refs: Vec<&Tensor<f64>> = parts.iter().collect();
        let y = concat_axis(&refs, axis).unwrap();
        if y.dims() != x.dims() || y.data() != x.data() {
            bad += 1;
        }
    }
    bad
}

/// Largest `|sum_j attn[i, j] - 1|` over random LSAE instances, padded
/// windows and several heads included.
pub fn attention_row_error(instances: usize, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let heads = rng.gen_range(1..=3);
        let c = heads * rng.gen_range(1..=4);
        let win = rng.gen_range(2..=5);
        let (h, w) = (rng.gen_range(1..=11), rng.gen_range(1..=11));
        let mut store = ParamStore::new();
        let mut init = seeded_rng(seed + k as u64);
        let p = LsaeParams::new(&mut ParamBuilder::new(&mut store, &mut init), "lsae", c, (win, win), heads, true).unwrap();
        randomize_store(&mut store, &mut rng);
        let x = random_tensor(&mut rng, &[2, c, h, w]).scale(3.0);
        let mode = if k % 2 == 0 { NormMode::Train } else { NormMode::Infer };
        let s = Session::with_tracking(&store, mode, false);
        let (_, attn) = p.forward_with_attention(&s, &s.input(x)).unwrap();
        let attn = attn.unwrap();
        let l = win * win;
        assert_eq!(attn.dims()[1..], [l, l]);
        for row in attn.value().data().chunks(l) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

/// Store with every learnable entry set to zero; buffers keep their values.
pub fn zero_learnable(store: &mut ParamStore<f64>) {
    let ids: Vec<_> = store.learnable().map(|(id, _)| id).collect();
    for id in ids {
        let z = Tensor::zeros(store.get(id).dims().to_vec()).unwrap();
        store.set(id, z).unwrap();
    }
}

/// Largest `|gpe(x) - x|` with all learnable parameters of the block zeroed,
/// over both normalization modes and padded and unpadded windows.
pub fn gpe_residual_identity_error(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for (c, win, h, w) in [(8, 4, 8, 8), (12, 4, 6, 9), (16, 7, 10, 10)] {
        let cfg = GpmConfig { channels: c, gig_kernel: 7, window: (win, win), heads: 1, expansion: 2, flags: AblationFlags::default() };
        let mut store = ParamStore::new();
        let p = GpeBlockParams::new(&mut ParamBuilder::new(&mut store, &mut rng), "gpe", cfg).unwrap();
        randomize_store(&mut store, &mut rng);
        zero_learnable(&mut store);
        let x = random_tensor(&mut rng, &[2, c, h, w]);
        for mode in [NormMode::Train, NormMode::Infer] {
            let y = run_once(&store, mode, &x, |s, v| p.forward(s, v)).unwrap();
            worst = worst.max(y.max_abs_diff(&x).unwrap());
        }
    }
    worst
}

/// Largest `|gpm(x) - manual(x)|` for a GPM built without GIG, where
/// `manual` splits the unmodified input and runs the two branches by hand.
pub fn gig_off_identity_error(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for use_asa_cra in [true, false] {
        let flags = AblationFlags { use_gig: false, use_lsae: true, use_asa_cra };
        let cfg = GpmConfig { channels: 12, gig_kernel: 7, window: (4, 4), heads: 2, expansion: 2, flags };
        let mut store = ParamStore::new();
        let p = GpmParams::new(&mut ParamBuilder::new(&mut store, &mut rng), "gpm", cfg).unwrap();
        randomize_store(&mut store, &mut rng);
        let x = random_tensor(&mut rng, &[2, 12, 7, 9]);
        for mode in [NormMode::Train, NormMode::Infer] {
            let got = run_once(&store, mode, &x, |s, v| p.forward(s, v)).unwrap();
            let want = run_once(&store, mode, &x, |s, v| {
                let halves = s.split(v, 1, &[6, 6])?;
                let mut a = p.lsae.as_ref().unwrap().forward(s, &halves[0])?;
                if let Some(asa) = &p.asa {
                    a = asa.forward(s, &a)?;
                }
                let mut b = p.irb.forward(s, &halves[1])?;
                if let Some(cra) = &p.cra {
                    b = cra.forward(s, &b)?;
                }
                s.concat(&[&a, &b], 1)
            })
            .unwrap();
            worst = worst.max(if got.data() == want.data() { 0.0 } else { got.max_abs_diff(&want).unwrap().max(f64::MIN_POSITIVE) });
        }
    }
    worst
}

/// An ablated micro model and its learnable-parameter deficit against the full one.
pub struct AblationRow {
    pub flags: AblationFlags,
    pub delta: i64,
    pub forward_ok: bool,
}

/// Builds every combination of the three flags on the micro config, runs a
/// forward pass, and reports the parameter delta against the full model.
pub fn ablation_rows() -> Vec<AblationRow> {
    let full = build_model::<f64>(&ModelConfig::micro(), 0).unwrap().store.learnable_count() as i64;
    let x = Tensor::<f64>::full(vec![2, 3, 32, 32], 0.1).unwrap();
    let mut rows = Vec::new();
    for bits in 0..8u8 {
        let flags = AblationFlags { use_gig: bits & 1 != 0, use_lsae: bits & 2 != 0, use_asa_cra: bits & 4 != 0 };
        let mut cfg = ModelConfig::micro();
        cfg.ablation = flags;
        let m = build_model::<f64>(&cfg, 0).unwrap();
        let forward_ok = model_forward(&m, &x, NormMode::Infer).map(|y| y.is_finite()).unwrap_or(false);
        let count = m.store.iter().filter(|(_, e)| e.kind == ParamKind::Learnable).map(|(_, e)| e.value.numel()).sum::<usize>();
        rows.push(AblationRow { flags, delta: full - count as i64, forward_ok });
    }
    rows
}

mod common;

use common::invariants::*;
use common::{random_tensor, randomize_store};
use hgpe::autodiff::Session;
use hgpe::blocks::*;
use hgpe::params::{seeded_rng, ParamBuilder, ParamStore};
use hgpe::tensor::{concat_axis, split_axis, window_merge, window_partition, NormMode};
use proptest::prelude::*;

fn gpm_config(channels: usize, window: usize, flags: AblationFlags) -> GpmConfig {
    GpmConfig { channels, gig_kernel: 5, window: (window, window), heads: 2, expansion: 2, flags }
}

#[test]
fn blocks_preserve_shape() {
    let mut rng = seeded_rng(1);
    let mut store = ParamStore::new();
    let mut b = ParamBuilder::new(&mut store, &mut rng);
    let gig = GigParams::new(&mut b, "gig", 6, 7).unwrap();
    let lsae = LsaeParams::new(&mut b, "lsae", 6, (4, 4), 2, true).unwrap();
    let asa = AsaParams::new(&mut b, "asa", 6).unwrap();
    let cra = CraParams::new(&mut b, "cra", 6).unwrap();
    let irb = IrbParams::new(&mut b, "irb", 6, 6, 3, 1).unwrap();
    let gpm = GpmParams::new(&mut b, "gpm", gpm_config(12, 4, AblationFlags::default())).unwrap();
    let gpe = GpeBlockParams::new(&mut b, "gpe", gpm_config(12, 4, AblationFlags::default())).unwrap();
    let down = IrbParams::new(&mut b, "down", 6, 10, 2, 2).unwrap();
    for mode in [NormMode::Train, NormMode::Infer] {
        let x = random_tensor(&mut rng, &[2, 6, 9, 7]);
        assert_eq!(gig_forward(&x, &gig, &store, mode).unwrap().dims(), x.dims());
        assert_eq!(lsae_forward(&x, &lsae, &store, mode).unwrap().dims(), x.dims());
        assert_eq!(asa_forward(&x, &asa, &store, mode).unwrap().dims(), x.dims());
        assert_eq!(cra_forward(&x, &cra, &store, mode).unwrap().dims(), x.dims());
        assert_eq!(irb_forward(&x, &irb, &store, mode).unwrap().dims(), x.dims());
        assert_eq!(irb_forward(&x, &down, &store, mode).unwrap().dims(), [2, 10, 5, 4]);
        let x = random_tensor(&mut rng, &[2, 12, 9, 7]);
        assert_eq!(gpm_forward(&x, &gpm, &store, mode).unwrap().dims(), x.dims());
        assert_eq!(gpe_block_forward(&x, &gpe, &store, mode).unwrap().dims(), x.dims());
    }
}

#[test]
fn channel_mismatch_names_the_layer() {
    let mut rng = seeded_rng(2);
    let mut store = ParamStore::new();
    let p = IrbParams::new(&mut ParamBuilder::new(&mut store, &mut rng), "stage1/block0/irb", 4, 4, 2, 1).unwrap();
    let x = random_tensor(&mut rng, &[1, 5, 4, 4]);
    let msg = irb_forward(&x, &p, &store, NormMode::Infer).unwrap_err().to_string();
    assert!(msg.contains("stage1/block0/irb"), "{msg}");
}

#[test]
fn attention_rows_are_distributions() {
    let err = attention_row_error(30, 3);
    assert!(err < 1e-6, "row sum error {err:e}");
}

#[test]
fn gates_are_open_interval() {
    let mut rng = seeded_rng(4);
    let mut store = ParamStore::new();
    let mut b = ParamBuilder::new(&mut store, &mut rng);
    let gig = GigParams::new(&mut b, "gig", 5, 7).unwrap();
    let asa = AsaParams::new(&mut b, "asa", 5).unwrap();
    let cra = CraParams::new(&mut b, "cra", 5).unwrap();
    randomize_store(&mut store, &mut rng);
    let x = random_tensor(&mut rng, &[2, 5, 6, 8]);
    let s = Session::with_tracking(&store, NormMode::Train, false);
    let v = s.input(x);
    let (gh, gw) = gig.gates(&s, &v).unwrap();
    let (ah, aw) = asa.gates(&s, &v).unwrap();
    let c = cra.gate(&s, &v).unwrap();
    for g in [gh, gw, ah, aw, c] {
        assert!(g.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn gpm_branches_are_independent_without_gig() {
    let flags = AblationFlags { use_gig: false, ..Default::default() };
    let mut rng = seeded_rng(5);
    let mut store = ParamStore::new();
    let p = GpmParams::new(&mut ParamBuilder::new(&mut store, &mut rng), "gpm", gpm_config(8, 4, flags)).unwrap();
    randomize_store(&mut store, &mut rng);
    let x = random_tensor(&mut rng, &[1, 8, 8, 8]);
    let base = gpm_forward(&x, &p, &store, NormMode::Infer).unwrap();
    let plane = 64;
    // Perturb the second half only: the first half of the output must not move.
    let mut data = x.data().to_vec();
    for v in &mut data[4 * plane..] {
        *v += 0.5;
    }
    let x2 = hgpe::Tensor::from_vec(x.dims().to_vec(), data).unwrap();
    let out = gpm_forward(&x2, &p, &store, NormMode::Infer).unwrap();
    assert_eq!(base.data()[..4 * plane], out.data()[..4 * plane]);
    assert_ne!(base.data()[4 * plane..], out.data()[4 * plane..]);
}

#[test]
fn lsae_is_window_local_in_inference() {
    let mut rng = seeded_rng(6);
    let mut store = ParamStore::new();
    let p = LsaeParams::new(&mut ParamBuilder::new(&mut store, &mut rng), "lsae", 4, (4, 4), 1, true).unwrap();
    randomize_store(&mut store, &mut rng);
    let x = random_tensor(&mut rng, &[1, 4, 8, 8]);
    let base = lsae_forward(&x, &p, &store, NormMode::Infer).unwrap();
    // Pixel (1, 2) lies in the top-left window.
    let mut data = x.data().to_vec();
    data[8 + 2] += 1.0;
    let out = lsae_forward(&hgpe::Tensor::from_vec(vec![1, 4, 8, 8], data).unwrap(), &p, &store, NormMode::Infer).unwrap();
    for c in 0..4 {
        for y in 0..8 {
            for xx in 0..8 {
                let i = (c * 8 + y) * 8 + xx;
                let inside = y < 4 && xx < 4;
                assert_eq!(base.data()[i] != out.data()[i], inside, "c{c} y{y} x{xx}");
            }
        }
    }
}

#[test]
fn gpe_block_is_identity_with_zeroed_branches() {
    let err = gpe_residual_identity_error(7);
    assert!(err < 1e-10, "{err:e}");
}

#[test]
fn gig_off_matches_manual_composition() {
    assert_eq!(gig_off_identity_error(8), 0.0);
}

#[test]
fn ablations_only_remove_parameters() {
    let rows = ablation_rows();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        assert!(r.delta >= 0 && r.forward_ok, "{:?} delta {}", r.flags, r.delta);
    }
    let full = rows.iter().find(|r| r.flags == AblationFlags::default()).unwrap();
    assert_eq!(full.delta, 0);
    assert!(rows.iter().filter(|r| r.flags != AblationFlags::default()).all(|r| r.delta > 0));
}

#[test]
fn window_roundtrip_exhaustive() {
    assert_eq!(window_roundtrip_failures(), vec![]);
}

#[test]
fn split_concat_roundtrip() {
    assert_eq!(split_concat_failures(500, 9), 0);
}

proptest! {
    #[test]
    fn window_roundtrip_rectangular(n in 1usize..3, c in 1usize..4, h in 1usize..20, w in 1usize..20,
                                    wh in 1usize..8, ww in 1usize..8, seed in any::<u64>()) {
        let x = random_tensor(&mut seeded_rng(seed), &[n, c, h, w]);
        let (p, pad) = window_partition(&x, wh, ww).unwrap();
        prop_assert_eq!(p.dims(), [n * h.div_ceil(wh) * w.div_ceil(ww), c, wh, ww]);
        let y = window_merge(&p, &pad).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn concat_then_split(a in 1usize..5, b in 1usize..5, axis in 0usize..4, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let mut da = vec![2, 3, 4, 5];
        let mut db = da.clone();
        da[axis] = a;
        db[axis] = b;
        let (ta, tb) = (random_tensor(&mut rng, &da), random_tensor(&mut rng, &db));
        let joined = concat_axis(&[&ta, &tb], axis).unwrap();
        let parts = split_axis(&joined, axis, &[a, b]).unwrap();
        prop_assert_eq!(parts[0].data(), ta.data());
        prop_assert_eq!(parts[1].data(), tb.data());
    }
}

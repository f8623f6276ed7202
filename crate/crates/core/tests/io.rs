use hgpe::backbone::{build_model, model_forward, ModelConfig, Variant};
use hgpe::io::*;
use hgpe::params::seeded_rng;
use hgpe::tensor::NormMode;
use hgpe::{DType, Error, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn trained_like(seed: u64) -> hgpe::backbone::HGpeModel<f32> {
    // Perturb every entry, buffers included, so defaults cannot mask a bad load.
    let mut m = build_model::<f32>(&ModelConfig::micro(), seed).unwrap();
    let mut rng = seeded_rng(seed + 100);
    let ids: Vec<_> = m.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let old = m.store.get(id);
        let data = old.data().iter().map(|&v| v + rng.gen_range(0.01..0.1)).collect();
        m.store.set(id, Tensor::from_vec(old.dims().to_vec(), data).unwrap()).unwrap();
    }
    m
}

#[test]
fn weights_roundtrip_bit_exact() {
    let m = trained_like(1);
    let bytes = write_weights(&m.store);
    assert_eq!(&bytes[..4], b"HGPE");
    let records = read_weights(&bytes).unwrap();
    assert_eq!(records.len(), m.store.len());
    for ((_, e), r) in m.store.iter().zip(&records) {
        assert_eq!(r.name, e.name);
        assert_eq!(r.dims, e.value.dims());
        assert_eq!(r.dtype, DType::F32);
        let payload: Vec<u8> = e.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(r.payload, payload);
    }

    let mut fresh = build_model::<f32>(&ModelConfig::micro(), 99).unwrap();
    load_weights_from(&bytes, &mut fresh.store).unwrap();
    assert_eq!(write_weights(&fresh.store), bytes);
    let x = Tensor::<f32>::full(vec![2, 3, 32, 32], 0.3).unwrap();
    let a = model_forward(&m, &x, NormMode::Infer).unwrap();
    let b = model_forward(&fresh, &x, NormMode::Infer).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn weights_file_on_disk() {
    let m = trained_like(2);
    let dir = std::env::temp_dir().join(format!("hgpe-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("w.bin");
    save_weights(&path, &m.store).unwrap();
    let mut other = build_model::<f32>(&ModelConfig::micro(), 3).unwrap();
    load_weights(&path, &mut other.store).unwrap();
    assert_eq!(write_weights(&other.store), write_weights(&m.store));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn f64_file_loads_into_f32_model() {
    let m = build_model::<f64>(&ModelConfig::micro(), 4).unwrap();
    let mut n = build_model::<f32>(&ModelConfig::micro(), 5).unwrap();
    load_weights_from(&write_weights(&m.store), &mut n.store).unwrap();
    assert_eq!(write_weights(&n.store), write_weights(&m.store.cast::<f32>()));
}

#[test]
fn corrupt_and_mismatched_files_are_rejected() {
    let m = build_model::<f32>(&ModelConfig::micro(), 6).unwrap();
    let bytes = write_weights(&m.store);
    let mut store = m.store.clone();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        let err = load_weights_from(&bytes[..cut], &mut store).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(load_weights_from(&bad, &mut store).is_err());

    let mut cfg = ModelConfig::micro();
    cfg.out_channels[3] = 24;
    let mut wider = build_model::<f32>(&cfg, 6).unwrap();
    let err = load_weights_from(&bytes, &mut wider.store).unwrap_err().to_string();
    assert!(err.contains("stage4/down/project/weight"), "{err}");

    let mut cfg = ModelConfig::micro();
    cfg.stack_count[1] = 2;
    let mut deeper = build_model::<f32>(&cfg, 6).unwrap();
    let err = load_weights_from(&bytes, &mut deeper.store).unwrap_err().to_string();
    assert!(err.contains("stage2/block1"), "{err}");
}

#[test]
fn config_roundtrip_presets() {
    for cfg in [
        ModelConfig::preset(Variant::S),
        ModelConfig::preset(Variant::T),
        ModelConfig::preset(Variant::N),
        ModelConfig::micro(),
    ] {
        let text = config_to_toml(&cfg).unwrap();
        assert_eq!(config_from_toml(&text).unwrap(), cfg);
    }
}

#[test]
fn config_rejects_unknown_keys_by_name() {
    let text = config_to_toml(&ModelConfig::micro()).unwrap();
    let err = config_from_toml(&format!("colour = 3\n{text}")).unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");
    let err = config_from_toml(&text.replace("use_gig", "use_gog")).unwrap_err().to_string();
    assert!(err.contains("use_gog"), "{err}");
    let err = config_from_toml(&text.replace("gig_kernel = 7", "gig_kernel = 4")).unwrap_err().to_string();
    assert!(err.contains("gig_kernel") || err.contains("kernel"), "{err}");
}

proptest! {
    #[test]
    fn config_roundtrip_random(stacks in prop::array::uniform4(1usize..5), halves in prop::array::uniform4(1usize..40),
                               expansion in 1usize..7, k in 0usize..4, win in prop::array::uniform3(0usize..15),
                               classes in 1usize..2000, size in 32usize..300, flags in prop::array::uniform3(any::<bool>())) {
        let mut cfg = ModelConfig::micro();
        cfg.variant = Variant::Custom;
        cfg.stack_count = stacks;
        cfg.out_channels = halves.map(|h| 2 * h);
        cfg.expansion = expansion;
        cfg.gig_kernel = 2 * k + 1;
        cfg.window_sizes = [0, win[0], win[1], win[2]];
        cfg.num_classes = classes;
        cfg.input_size = [size, size + 1];
        cfg.ablation.use_gig = flags[0];
        cfg.ablation.use_lsae = flags[1];
        cfg.ablation.use_asa_cra = flags[2];
        prop_assume!(cfg.validate().is_ok());
        let text = config_to_toml(&cfg).unwrap();
        prop_assert_eq!(config_from_toml(&text).unwrap(), cfg);
    }
}

fn ppm(w: usize, h: usize, pixels: impl Fn(usize, usize) -> [u8; 3]) -> Vec<u8> {
    let mut out = format!("P6\n# test image\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&pixels(x, y));
        }
    }
    out
}

#[test]
fn ppm_parse_resize_normalize() {
    let img = parse_ppm(&ppm(4, 2, |x, y| [x as u8 * 60, y as u8 * 255, 128])).unwrap();
    assert_eq!((img.width, img.height), (4, 2));
    assert_eq!(&img.rgb[3..6], &[60, 0, 128]);

    let small = resize_nearest(&img, 1, 2);
    assert_eq!(small.rgb, vec![60, 255, 128, 180, 255, 128]);
    let big = resize_nearest(&img, 4, 8);
    assert_eq!(&big.rgb[..6], &[0, 0, 128, 0, 0, 128]);

    let x = to_input::<f64>(&img, 2, 4).unwrap();
    assert_eq!(x.dims(), [1, 3, 2, 4]);
    assert_eq!(x.at(&[0, 1, 1, 0]), 1.0);
    assert_eq!(x.at(&[0, 1, 0, 0]), -1.0);
    assert!((x.at(&[0, 0, 0, 1]) - (60.0 / 255.0 - 0.5) / 0.5).abs() < 1e-15);
}

#[test]
fn malformed_ppm_is_rejected() {
    let good = ppm(3, 3, |_, _| [1, 2, 3]);
    assert!(parse_ppm(&good).is_ok());
    assert!(parse_ppm(&good[..good.len() - 1]).is_err());
    assert!(parse_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
    assert!(parse_ppm(b"P6\n1 x\n255\n").is_err());
    assert!(parse_ppm(b"P6\n1 1\n").is_err());
    assert!(parse_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
}

#[test]
fn gray_image_gives_finite_logits() {
    let m = build_model::<f32>(&ModelConfig::micro(), 0).unwrap();
    let img = parse_ppm(&ppm(50, 40, |_, _| [128, 128, 128])).unwrap();
    let x = to_input::<f32>(&img, 32, 32).unwrap();
    let y = model_forward(&m, &x, NormMode::Infer).unwrap();
    assert!(y.is_finite());
}

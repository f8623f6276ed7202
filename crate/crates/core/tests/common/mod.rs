//! Straight-line loop transcriptions of the blocks, written against plain
//! `Vec<f64>` buffers and parameters looked up by name. They share no code
//! with the library kernels.

#![allow(dead_code)]

use hgpe::params::ParamStore;
use hgpe::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;

/// NCHW buffer.
#[derive(Clone, Debug)]
pub struct Buf {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl Buf {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Buf { n, c, h, w, d: vec![0.0; n * c * h * w] }
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        let d = t.dims();
        Buf { n: d[0], c: d[1], h: d[2], w: d[3], d: t.data().to_vec() }
    }

    pub fn idx(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.c + c) * self.h + i) * self.w + j
    }

    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.d[self.idx(n, c, i, j)]
    }

    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: f64) {
        let k = self.idx(n, c, i, j);
        self.d[k] = v;
    }
}

pub fn param(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap_or_else(|| panic!("missing parameter {name}")).data().to_vec()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn hswish(x: f64) -> f64 {
    x * (x + 3.0).clamp(0.0, 6.0) / 6.0
}

/// Convolution written as seven nested loops.
pub fn conv(
    x: &Buf,
    weight: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    groups: usize,
) -> Buf {
    let cin_g = x.c / groups;
    let cout_g = cout / groups;
    let oh = (x.h + 2 * ph - kh) / sh + 1;
    let ow = (x.w + 2 * pw - kw) / sw + 1;
    let mut y = Buf::zeros(x.n, cout, oh, ow);
    for n in 0..x.n {
        for o in 0..cout {
            let g = o / cout_g;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for ci in 0..cin_g {
                        for a in 0..kh {
                            for b in 0..kw {
                                let r = (i * sh + a) as isize - ph as isize;
                                let s = (j * sw + b) as isize - pw as isize;
                                if r < 0 || s < 0 || r >= x.h as isize || s >= x.w as isize {
                                    continue;
                                }
                                let wv = weight[((o * cin_g + ci) * kh + a) * kw + b];
                                acc += wv * x.at(n, g * cin_g + ci, r as usize, s as usize);
                            }
                        }
                    }
                    y.set(n, o, i, j, acc);
                }
            }
        }
    }
    y
}

/// Batch norm: per channel over batch and space, or with running statistics.
pub fn batch_norm(x: &Buf, store: &ParamStore<f64>, path: &str, train: bool) -> Buf {
    let scale = param(store, &format!("{path}/scale"));
    let shift = param(store, &format!("{path}/shift"));
    let rm = param(store, &format!("{path}/running_mean"));
    let rv = param(store, &format!("{path}/running_var"));
    let mut y = x.clone();
    for c in 0..x.c {
        let (mean, var) = if train {
            let mut vals = Vec::new();
            for n in 0..x.n {
                for i in 0..x.h {
                    for j in 0..x.w {
                        vals.push(x.at(n, c, i, j));
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            (m, v)
        } else {
            (rm[c], rv[c])
        };
        for n in 0..x.n {
            for i in 0..x.h {
                for j in 0..x.w {
                    let v = (x.at(n, c, i, j) - mean) / (var + EPS).sqrt();
                    y.set(n, c, i, j, v * scale[c] + shift[c]);
                }
            }
        }
    }
    y
}

/// Layer norm over channels at every pixel.
pub fn layer_norm(x: &Buf, store: &ParamStore<f64>, path: &str) -> Buf {
    let scale = param(store, &format!("{path}/scale"));
    let shift = param(store, &format!("{path}/shift"));
    let mut y = x.clone();
    for n in 0..x.n {
        for i in 0..x.h {
            for j in 0..x.w {
                let m = (0..x.c).map(|c| x.at(n, c, i, j)).sum::<f64>() / x.c as f64;
                let v = (0..x.c).map(|c| (x.at(n, c, i, j) - m).powi(2)).sum::<f64>() / x.c as f64;
                for c in 0..x.c {
                    let z = (x.at(n, c, i, j) - m) / (v + EPS).sqrt();
                    y.set(n, c, i, j, z * scale[c] + shift[c]);
                }
            }
        }
    }
    y
}

/// Group norm per sample over `C / groups` channels and space.
pub fn group_norm(x: &Buf, store: &ParamStore<f64>, path: &str, groups: usize) -> Buf {
    let scale = param(store, &format!("{path}/scale"));
    let shift = param(store, &format!("{path}/shift"));
    let cg = x.c / groups;
    let mut y = x.clone();
    for n in 0..x.n {
        for g in 0..groups {
            let mut vals = Vec::new();
            for c in g * cg..(g + 1) * cg {
                for i in 0..x.h {
                    for j in 0..x.w {
                        vals.push(x.at(n, c, i, j));
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            for c in g * cg..(g + 1) * cg {
                for i in 0..x.h {
                    for j in 0..x.w {
                        let z = (x.at(n, c, i, j) - m) / (v + EPS).sqrt();
                        y.set(n, c, i, j, z * scale[c] + shift[c]);
                    }
                }
            }
        }
    }
    y
}

/// Row means `[N, C, H, 1]` and column means `[N, C, 1, W]`.
pub fn strips(x: &Buf) -> (Buf, Buf) {
    let mut rows = Buf::zeros(x.n, x.c, x.h, 1);
    let mut cols = Buf::zeros(x.n, x.c, 1, x.w);
    for n in 0..x.n {
        for c in 0..x.c {
            for i in 0..x.h {
                let s: f64 = (0..x.w).map(|j| x.at(n, c, i, j)).sum();
                rows.set(n, c, i, 0, s / x.w as f64);
            }
            for j in 0..x.w {
                let s: f64 = (0..x.h).map(|i| x.at(n, c, i, j)).sum();
                cols.set(n, c, 0, j, s / x.h as f64);
            }
        }
    }
    (rows, cols)
}

/// `x * gh[i] * gw[j]` per sample and channel.
pub fn apply_gates(x: &Buf, gh: &Buf, gw: &Buf) -> Buf {
    let mut y = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            for i in 0..x.h {
                for j in 0..x.w {
                    y.set(n, c, i, j, x.at(n, c, i, j) * gh.at(n, c, i, 0) * gw.at(n, c, 0, j));
                }
            }
        }
    }
    y
}

/// Global information gate.
pub fn gig(x: &Buf, store: &ParamStore<f64>, p: &str, kernel: usize, train: bool) -> Buf {
    let (rows, cols) = strips(x);
    // Row means then column means, stacked along the height axis.
    let mut seq = Buf::zeros(x.n, x.c, x.h + x.w, 1);
    for n in 0..x.n {
        for c in 0..x.c {
            for i in 0..x.h {
                seq.set(n, c, i, 0, rows.at(n, c, i, 0));
            }
            for j in 0..x.w {
                seq.set(n, c, x.h + j, 0, cols.at(n, c, 0, j));
            }
        }
    }
    let wk = param(store, &format!("{p}/dw_strip/weight"));
    let y = conv(&seq, &wk, None, x.c, (kernel, 1), (1, 1), (kernel / 2, 0), x.c);
    let mut y = batch_norm(&y, store, &format!("{p}/strip_bn"), train);
    for v in &mut y.d {
        *v = hswish(*v);
    }
    let mut th = Buf::zeros(x.n, x.c, x.h, 1);
    let mut tw = Buf::zeros(x.n, x.c, 1, x.w);
    for n in 0..x.n {
        for c in 0..x.c {
            for i in 0..x.h {
                th.set(n, c, i, 0, y.at(n, c, i, 0));
            }
            for j in 0..x.w {
                tw.set(n, c, 0, j, y.at(n, c, x.h + j, 0));
            }
        }
    }
    let wh = param(store, &format!("{p}/gate_h/weight"));
    let bh = param(store, &format!("{p}/gate_h/bias"));
    let ww = param(store, &format!("{p}/gate_w/weight"));
    let bw = param(store, &format!("{p}/gate_w/bias"));
    let mut gh = conv(&th, &wh, Some(&bh), x.c, (3, 1), (1, 1), (1, 0), x.c);
    let mut gw = conv(&tw, &ww, Some(&bw), x.c, (1, 3), (1, 1), (0, 1), x.c);
    for v in gh.d.iter_mut().chain(gw.d.iter_mut()) {
        *v = sigmoid(*v);
    }
    apply_gates(x, &gh, &gw)
}

/// Axial spatial attention.
pub fn asa(x: &Buf, store: &ParamStore<f64>, p: &str, groups: usize) -> Buf {
    let (rows, cols) = strips(x);
    let wh = param(store, &format!("{p}/conv_h/weight"));
    let bh = param(store, &format!("{p}/conv_h/bias"));
    let ww = param(store, &format!("{p}/conv_w/weight"));
    let bw = param(store, &format!("{p}/conv_w/bias"));
    let gh = conv(&rows, &wh, Some(&bh), x.c, (3, 1), (1, 1), (1, 0), x.c);
    let gw = conv(&cols, &ww, Some(&bw), x.c, (1, 3), (1, 1), (0, 1), x.c);
    let mut gh = group_norm(&gh, store, &format!("{p}/gn_h"), groups);
    let mut gw = group_norm(&gw, store, &format!("{p}/gn_w"), groups);
    for v in gh.d.iter_mut().chain(gw.d.iter_mut()) {
        *v = sigmoid(*v);
    }
    apply_gates(x, &gh, &gw)
}

/// Channel relational attention.
pub fn cra(x: &Buf, store: &ParamStore<f64>, p: &str, kernel: usize) -> Buf {
    let w = param(store, &format!("{p}/conv/weight"));
    let half = (kernel / 2) as isize;
    let mut y = x.clone();
    for n in 0..x.n {
        let mut pooled = vec![0.0; x.c];
        for (c, slot) in pooled.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..x.h {
                for j in 0..x.w {
                    s += x.at(n, c, i, j);
                }
            }
            *slot = s / (x.h * x.w) as f64;
        }
        for c in 0..x.c {
            let mut m = 0.0;
            for t in 0..kernel {
                let src = c as isize + t as isize - half;
                if src >= 0 && (src as usize) < x.c {
                    m += w[t] * pooled[src as usize];
                }
            }
            let g = sigmoid(m);
            for i in 0..x.h {
                for j in 0..x.w {
                    y.set(n, c, i, j, x.at(n, c, i, j) * g);
                }
            }
        }
    }
    y
}

/// Inverted residual block.
pub fn irb(x: &Buf, store: &ParamStore<f64>, p: &str, cout: usize, t: usize, stride: usize, train: bool) -> Buf {
    let hidden = x.c * t;
    let y = conv(x, &param(store, &format!("{p}/expand/weight")), None, hidden, (1, 1), (1, 1), (0, 0), 1);
    let mut y = batch_norm(&y, store, &format!("{p}/expand_bn"), train);
    y.d.iter_mut().for_each(|v| *v = hswish(*v));
    let y = conv(&y, &param(store, &format!("{p}/depthwise/weight")), None, hidden, (3, 3), (stride, stride), (1, 1), hidden);
    let mut y = batch_norm(&y, store, &format!("{p}/depthwise_bn"), train);
    y.d.iter_mut().for_each(|v| *v = hswish(*v));
    let y = conv(&y, &param(store, &format!("{p}/project/weight")), None, cout, (1, 1), (1, 1), (0, 0), 1);
    let mut y = batch_norm(&y, store, &format!("{p}/project_bn"), train);
    if stride == 1 && x.c == cout {
        for (a, b) in y.d.iter_mut().zip(&x.d) {
            *a += b;
        }
    }
    y
}

/// Windowed self-attention. Returns the output and every attention row.
pub fn lsae(x: &Buf, store: &ParamStore<f64>, p: &str, win: usize, heads: usize, train: bool) -> (Buf, Vec<Vec<f64>>) {
    let c = x.c;
    let xn = layer_norm(x, store, &format!("{p}/norm"));
    let nh = x.h.div_ceil(win);
    let nw = x.w.div_ceil(win);
    let nwin = x.n * nh * nw;
    // Gather zero-padded windows: [nwin, C, win, win].
    let mut windows = Buf::zeros(nwin, c, win, win);
    for n in 0..x.n {
        for a in 0..nh {
            for b in 0..nw {
                let k = (n * nh + a) * nw + b;
                for ch in 0..c {
                    for i in 0..win {
                        for j in 0..win {
                            let (r, s) = (a * win + i, b * win + j);
                            if r < x.h && s < x.w {
                                windows.set(k, ch, i, j, xn.at(n, ch, r, s));
                            }
                        }
                    }
                }
            }
        }
    }
    let qk = conv(&windows, &param(store, &format!("{p}/qk/weight")), None, 2 * c, (1, 1), (1, 1), (0, 0), 1);
    let qk = batch_norm(&qk, store, &format!("{p}/qk_bn"), train);
    let v = conv(&windows, &param(store, &format!("{p}/v/weight")), None, c, (1, 1), (1, 1), (0, 0), 1);
    let v = batch_norm(&v, store, &format!("{p}/v_bn"), train);

    let d = c / heads;
    let l = win * win;
    let mut out = Buf::zeros(nwin, c, win, win);
    let mut rows = Vec::new();
    for k in 0..nwin {
        for h in 0..heads {
            for i in 0..l {
                let mut logits = vec![0.0; l];
                for (j, logit) in logits.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for e in 0..d {
                        let q = qk.at(k, h * d + e, i / win, i % win);
                        let kk = qk.at(k, c + h * d + e, j / win, j % win);
                        dot += q * kk;
                    }
                    *logit = dot / (d as f64).sqrt();
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|z| (z - mx).exp()).collect();
                let total: f64 = exps.iter().sum();
                let attn: Vec<f64> = exps.iter().map(|e| e / total).collect();
                for e in 0..d {
                    let mut acc = 0.0;
                    for j in 0..l {
                        acc += attn[j] * v.at(k, h * d + e, j / win, j % win);
                    }
                    out.set(k, h * d + e, i / win, i % win, acc);
                }
                rows.push(attn);
            }
        }
    }
    let mut y = Buf::zeros(x.n, c, x.h, x.w);
    for n in 0..x.n {
        for a in 0..nh {
            for b in 0..nw {
                let k = (n * nh + a) * nw + b;
                for ch in 0..c {
                    for i in 0..win {
                        for j in 0..win {
                            let (r, s) = (a * win + i, b * win + j);
                            if r < x.h && s < x.w {
                                y.set(n, ch, r, s, out.at(k, ch, i, j));
                            }
                        }
                    }
                }
            }
        }
    }
    (y, rows)
}

/// Jitters learnable entries and draws positive running statistics, so
/// every parameter takes a generic value.
pub fn randomize_store(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let name = store.name(id).to_string();
        let t = store.get(id);
        let data: Vec<f64> = t
            .data()
            .iter()
            .map(|&v| {
                if name.ends_with("running_var") {
                    rng.gen_range(0.5..1.5)
                } else if name.ends_with("running_mean") {
                    rng.gen_range(-0.3..0.3)
                } else {
                    v + rng.gen_range(-0.2..0.2)
                }
            })
            .collect();
        let next = Tensor::from_vec(t.dims().to_vec(), data).unwrap();
        store.set(id, next).unwrap();
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Buf) -> f64 {
    assert_eq!(a.dims(), [b.n, b.c, b.h, b.w]);
    a.data().iter().zip(&b.d).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Block kinds with a loop transcription.
pub const ORACLE_BLOCKS: [&str; 5] = ["gig", "lsae", "asa", "cra", "irb"];

/// Runs `count` random instances of `block` against its transcription and
/// returns the largest absolute difference seen.
pub fn oracle_sweep(block: &str, count: usize, seed: u64) -> f64 {
    use hgpe::blocks::*;
    use hgpe::params::{seeded_rng, ParamBuilder};
    use hgpe::tensor::NormMode;

    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for k in 0..count {
        let train = k % 2 == 0;
        let mode = if train { NormMode::Train } else { NormMode::Infer };
        let n = rng.gen_range(1..=2);
        let h = rng.gen_range(3..=9);
        let w = rng.gen_range(3..=9);
        let mut store = ParamStore::new();
        let mut init = seeded_rng(seed.wrapping_mul(31).wrapping_add(k as u64));
        let mut b = ParamBuilder::new(&mut store, &mut init);
        let err = match block {
            "gig" => {
                let c = rng.gen_range(1..=6);
                let kernel = [3, 5, 7][rng.gen_range(0..3)];
                let p = GigParams::new(&mut b, "blk", c, kernel).unwrap();
                randomize_store(&mut store, &mut rng);
                let x = random_tensor(&mut rng, &[n, c, h, w]);
                let got = gig_forward(&x, &p, &store, mode).unwrap();
                max_abs_diff(&got, &gig(&Buf::from_tensor(&x), &store, "blk", kernel, train))
            }
            "lsae" => {
                let heads = rng.gen_range(1..=2);
                let c = heads * rng.gen_range(1..=3);
                let win = rng.gen_range(2..=4);
                let p = LsaeParams::new(&mut b, "blk", c, (win, win), heads, true).unwrap();
                randomize_store(&mut store, &mut rng);
                let x = random_tensor(&mut rng, &[n, c, h, w]);
                let got = lsae_forward(&x, &p, &store, mode).unwrap();
                max_abs_diff(&got, &lsae(&Buf::from_tensor(&x), &store, "blk", win, heads, train).0)
            }
            "asa" => {
                let c = rng.gen_range(1..=20);
                let p = AsaParams::new(&mut b, "blk", c).unwrap();
                randomize_store(&mut store, &mut rng);
                let x = random_tensor(&mut rng, &[n, c, h, w]);
                let got = asa_forward(&x, &p, &store, mode).unwrap();
                max_abs_diff(&got, &asa(&Buf::from_tensor(&x), &store, "blk", asa_groups(c)))
            }
            "cra" => {
                let c = rng.gen_range(1..=40);
                let p = CraParams::new(&mut b, "blk", c).unwrap();
                randomize_store(&mut store, &mut rng);
                let x = random_tensor(&mut rng, &[n, c, h, w]);
                let got = cra_forward(&x, &p, &store, mode).unwrap();
                max_abs_diff(&got, &cra(&Buf::from_tensor(&x), &store, "blk", cra_kernel_size(c)))
            }
            "irb" => {
                let cin = rng.gen_range(1..=5);
                let stride = rng.gen_range(1..=2);
                let cout = if rng.gen_bool(0.5) { cin } else { rng.gen_range(1..=6) };
                let t = rng.gen_range(1..=3);
                let p = IrbParams::new(&mut b, "blk", cin, cout, t, stride).unwrap();
                randomize_store(&mut store, &mut rng);
                let x = random_tensor(&mut rng, &[n, cin, h, w]);
                let got = irb_forward(&x, &p, &store, mode).unwrap();
                max_abs_diff(&got, &irb(&Buf::from_tensor(&x), &store, "blk", cout, t, stride, train))
            }
            other => panic!("no transcription for {other}"),
        };
        worst = worst.max(err);
    }
    worst
}
pub mod invariants;

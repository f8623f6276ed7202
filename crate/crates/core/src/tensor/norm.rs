use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{debug_check_finite, Shape, Tensor};

/// Which elements share normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Per channel, over batch and space.
    Batch,
    /// Per sample and spatial position, over channels.
    Layer,
    /// Per sample and channel group, over the group's channels and space.
    Group(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

/// Statistics a normalization used, one entry per slice.
#[derive(Debug, Clone)]
pub struct NormSaved {
    pub mean: Vec<f64>,
    /// Biased variance of each slice.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Number of elements per slice.
    pub count: usize,
    /// True when the statistics were fixed inputs (batch norm at inference).
    pub fixed: bool,
}

pub struct NormGrads<T> {
    pub input: Tensor<T>,
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
}

struct Layout {
    n: usize,
    c: usize,
    hw: usize,
    kind: NormKind,
}

impl Layout {
    fn new(shape: &Shape, kind: NormKind) -> Result<Self> {
        let (n, c, h, w) = shape.nchw()?;
        if let NormKind::Group(g) = kind {
            if g == 0 || c % g != 0 {
                return Err(Error::Groups { what: "group norm channels", channels: c, groups: g });
            }
        }
        Ok(Layout { n, c, hw: h * w, kind })
    }

    fn slices(&self) -> usize {
        match self.kind {
            NormKind::Batch => self.c,
            NormKind::Layer => self.n * self.hw,
            NormKind::Group(g) => self.n * g,
        }
    }

    fn slice_len(&self) -> usize {
        match self.kind {
            NormKind::Batch => self.n * self.hw,
            NormKind::Layer => self.c,
            NormKind::Group(g) => self.c / g * self.hw,
        }
    }

    /// Calls `f(flat_index, channel)` for each element of slice `s`.
    #[inline]
    fn visit(&self, s: usize, mut f: impl FnMut(usize, usize)) {
        let (c, hw) = (self.c, self.hw);
        match self.kind {
            NormKind::Batch => {
                for ni in 0..self.n {
                    let base = (ni * c + s) * hw;
                    for i in base..base + hw {
                        f(i, s);
                    }
                }
            }
            NormKind::Layer => {
                let (ni, p) = (s / hw, s % hw);
                for ch in 0..c {
                    f((ni * c + ch) * hw + p, ch);
                }
            }
            NormKind::Group(g) => {
                let cg = c / g;
                let (ni, gi) = (s / g, s % g);
                let base = (ni * c + gi * cg) * hw;
                for j in 0..cg * hw {
                    f(base + j, gi * cg + j / hw);
                }
            }
        }
    }
}

fn expect_channel_vec<T: Scalar>(t: &Tensor<T>, c: usize, what: &'static str) -> Result<()> {
    if t.dims() != [c] {
        return Err(Error::AxisMismatch { axis: what, expected: c, actual: t.numel() });
    }
    Ok(())
}

/// Normalizes `x` and applies the per-channel affine `scale`, `shift`.
///
/// `running` supplies `(mean, var)` for batch norm at inference; other kinds
/// and training mode always use the statistics of `x` itself.
pub fn normalize<T: Scalar>(
    x: &Tensor<T>,
    kind: NormKind,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running: Option<(&Tensor<T>, &Tensor<T>)>,
    mode: NormMode,
    eps: f64,
) -> Result<(Tensor<T>, NormSaved)> {
    let lay = Layout::new(x.shape(), kind)?;
    expect_channel_vec(scale, lay.c, "norm scale length")?;
    expect_channel_vec(shift, lay.c, "norm shift length")?;
    let d = x.data();
    let slices = lay.slices();
    let count = lay.slice_len();
    let fixed = kind == NormKind::Batch && mode == NormMode::Infer;
    let (mean, var) = if fixed {
        let (rm, rv) = running.ok_or_else(|| Error::invalid("batch norm inference needs running statistics"))?;
        expect_channel_vec(rm, lay.c, "running mean length")?;
        expect_channel_vec(rv, lay.c, "running var length")?;
        (rm.to_f64_vec(), rv.to_f64_vec())
    } else {
        let mut mean = vec![0.0; slices];
        let mut var = vec![0.0; slices];
        for s in 0..slices {
            let mut sum = 0.0;
            lay.visit(s, |i, _| sum += d[i].f64());
            let m = sum / count as f64;
            let mut sq = 0.0;
            lay.visit(s, |i, _| {
                let dv = d[i].f64() - m;
                sq += dv * dv;
            });
            mean[s] = m;
            var[s] = sq / count as f64;
        }
        (mean, var)
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let sc = scale.to_f64_vec();
    let sh = shift.to_f64_vec();
    let mut out = vec![0.0f64; x.numel()];
    for s in 0..slices {
        let (m, is) = (mean[s], inv_std[s]);
        lay.visit(s, |i, ch| out[i] = (d[i].f64() - m) * is * sc[ch] + sh[ch]);
    }
    let y = Tensor::from_f64_parts(x.shape().clone(), out);
    debug_check_finite("normalize", &[x, scale, shift], &y);
    Ok((y, NormSaved { mean, var, inv_std, count, fixed }))
}

pub fn normalize_backward<T: Scalar>(
    x: &Tensor<T>,
    kind: NormKind,
    scale: &Tensor<T>,
    saved: &NormSaved,
    grad: &Tensor<T>,
) -> Result<NormGrads<T>> {
    x.expect_same_shape(grad)?;
    let lay = Layout::new(x.shape(), kind)?;
    let d = x.data();
    let g = grad.data();
    let sc = scale.to_f64_vec();
    let mut gx = vec![0.0f64; x.numel()];
    let mut gscale = vec![0.0f64; lay.c];
    let mut gshift = vec![0.0f64; lay.c];
    let count = saved.count as f64;
    for s in 0..lay.slices() {
        let (m, is) = (saved.mean[s], saved.inv_std[s]);
        // g_hat = dy * scale; dx = is * (g_hat - mean(g_hat) - xhat * mean(g_hat * xhat))
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        lay.visit(s, |i, ch| {
            let xhat = (d[i].f64() - m) * is;
            let dy = g[i].f64();
            gscale[ch] += dy * xhat;
            gshift[ch] += dy;
            let gh = dy * sc[ch];
            sum_g += gh;
            sum_gx += gh * xhat;
        });
        if saved.fixed {
            lay.visit(s, |i, ch| gx[i] = g[i].f64() * sc[ch] * is);
        } else {
            let (mg, mgx) = (sum_g / count, sum_gx / count);
            lay.visit(s, |i, ch| {
                let xhat = (d[i].f64() - m) * is;
                gx[i] = is * (g[i].f64() * sc[ch] - mg - xhat * mgx);
            });
        }
    }
    let cshape = Shape(vec![lay.c]);
    Ok(NormGrads {
        input: Tensor::from_f64_parts(x.shape().clone(), gx),
        scale: Tensor::from_f64_parts(cshape.clone(), gscale),
        shift: Tensor::from_f64_parts(cshape, gshift),
    })
}

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{debug_check_finite, Shape, Tensor};

/// Stride, zero padding and channel grouping of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dSpec {
            stride: (stride, stride),
            padding: (padding, padding),
            groups,
        }
    }

    /// Stride 1, "same" padding for an odd `kh x kw` kernel.
    pub fn same(kh: usize, kw: usize, groups: usize) -> Self {
        Conv2dSpec {
            stride: (1, 1),
            padding: (kh / 2, kw / 2),
            groups,
        }
    }
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec::new(1, 0, 1)
    }
}

pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose input tap `o*stride + k - pad` is in bounds.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o*stride + k - pad <= in_len - 1
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &Conv2dSpec) -> Result<Geometry> {
    let (n, cin, h, w) = x.nchw()?;
    let (cout, cin_g, kh, kw) = weight.shape().nchw()?;
    let g = spec.groups;
    if g == 0 || spec.stride.0 == 0 || spec.stride.1 == 0 {
        return Err(Error::invalid("conv2d: stride and groups must be >= 1"));
    }
    if cin % g != 0 {
        return Err(Error::Groups { what: "input channels", channels: cin, groups: g });
    }
    if cout % g != 0 {
        return Err(Error::Groups { what: "output channels", channels: cout, groups: g });
    }
    if cin / g != cin_g {
        return Err(Error::AxisMismatch { axis: "channel (input channels per group)", expected: cin_g * g, actual: cin });
    }
    if let Some(b) = bias {
        if b.dims() != [cout] {
            return Err(Error::AxisMismatch { axis: "bias length", expected: cout, actual: b.numel() });
        }
    }
    let oh = conv2d_output_size(h, kh, spec.stride.0, spec.padding.0)
        .ok_or_else(|| Error::AxisMismatch { axis: "height (kernel larger than padded input)", expected: kh, actual: h + 2 * spec.padding.0 })?;
    let ow = conv2d_output_size(w, kw, spec.stride.1, spec.padding.1)
        .ok_or_else(|| Error::AxisMismatch { axis: "width (kernel larger than padded input)", expected: kw, actual: w + 2 * spec.padding.1 })?;
    Ok(Geometry { n, cin, h, w, cout, cin_g, cout_g: cout / g, kh, kw, oh, ow })
}

/// Cross-correlation of `x` with `weight` (no kernel flip), grouped and zero padded.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: Conv2dSpec) -> Result<Tensor<T>> {
    let gm = geometry(x, weight, bias, &spec)?;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let xd = x.data();
    let wd = weight.data();
    let plane_out = gm.oh * gm.ow;
    let mut out = vec![0.0f64; gm.n * gm.cout * plane_out];
    for ni in 0..gm.n {
        for oc in 0..gm.cout {
            let g = oc / gm.cout_g;
            let acc = &mut out[(ni * gm.cout + oc) * plane_out..][..plane_out];
            if let Some(b) = bias {
                acc.fill(b.data()[oc].f64());
            }
            for icg in 0..gm.cin_g {
                let ic = g * gm.cin_g + icg;
                let xp = &xd[(ni * gm.cin + ic) * gm.h * gm.w..][..gm.h * gm.w];
                for ky in 0..gm.kh {
                    let (oy0, oy1) = valid_range(ky, ph, sh, gm.h, gm.oh);
                    for kx in 0..gm.kw {
                        let wv = wd[((oc * gm.cin_g + icg) * gm.kh + ky) * gm.kw + kx].f64();
                        let (ox0, ox1) = valid_range(kx, pw, sw, gm.w, gm.ow);
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - ph;
                            let row = &xp[iy * gm.w..][..gm.w];
                            let arow = &mut acc[oy * gm.ow..][..gm.ow];
                            for ox in ox0..ox1 {
                                arow[ox] += wv * row[ox * sw + kx - pw].f64();
                            }
                        }
                    }
                }
            }
        }
    }
    let y = Tensor::from_f64_parts(Shape(vec![gm.n, gm.cout, gm.oh, gm.ow]), out);
    debug_check_finite("conv2d", &[x, weight], &y);
    Ok(y)
}

/// Gradients of [`conv2d`] with respect to each of its inputs.
#[derive(Clone)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    spec: Conv2dSpec,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let gm = geometry(x, weight, None, &spec)?;
    if grad_out.dims() != [gm.n, gm.cout, gm.oh, gm.ow] {
        return Err(Error::InvalidShape {
            shape: grad_out.dims().to_vec(),
            reason: format!("conv2d gradient must be [{}, {}, {}, {}]", gm.n, gm.cout, gm.oh, gm.ow),
        });
    }
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let plane_in = gm.h * gm.w;
    let plane_out = gm.oh * gm.ow;
    let mut gx = vec![0.0f64; x.numel()];
    let mut gw = vec![0.0f64; weight.numel()];
    let mut gb = vec![0.0f64; if has_bias { gm.cout } else { 0 }];
    for ni in 0..gm.n {
        for oc in 0..gm.cout {
            let g = oc / gm.cout_g;
            let gp = &gd[(ni * gm.cout + oc) * plane_out..][..plane_out];
            if has_bias {
                gb[oc] += gp.iter().map(|v| v.f64()).sum::<f64>();
            }
            for icg in 0..gm.cin_g {
                let ic = g * gm.cin_g + icg;
                let base_in = (ni * gm.cin + ic) * plane_in;
                let xp = &xd[base_in..][..plane_in];
                for ky in 0..gm.kh {
                    let (oy0, oy1) = valid_range(ky, ph, sh, gm.h, gm.oh);
                    for kx in 0..gm.kw {
                        let widx = ((oc * gm.cin_g + icg) * gm.kh + ky) * gm.kw + kx;
                        let wv = wd[widx].f64();
                        let (ox0, ox1) = valid_range(kx, pw, sw, gm.w, gm.ow);
                        let mut wacc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - ph;
                            let grow = &gp[oy * gm.ow..][..gm.ow];
                            let xrow = &xp[iy * gm.w..][..gm.w];
                            let gxrow = &mut gx[base_in + iy * gm.w..][..gm.w];
                            for ox in ox0..ox1 {
                                let ix = ox * sw + kx - pw;
                                let gv = grow[ox].f64();
                                wacc += gv * xrow[ix].f64();
                                gxrow[ix] += wv * gv;
                            }
                        }
                        gw[widx] += wacc;
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::from_f64_parts(x.shape().clone(), gx),
        weight: Tensor::from_f64_parts(weight.shape().clone(), gw),
        bias: has_bias.then(|| Tensor::from_f64_parts(Shape(vec![gm.cout]), gb)),
    })
}

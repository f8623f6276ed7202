use crate::error::Result;
use crate::scalar::Scalar;

use super::{Shape, Tensor};

/// Spatial axis kept by a strip pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripAxis {
    /// Keep rows: mean over the width, output `N x C x H x 1`.
    Height,
    /// Keep columns: mean over the height, output `N x C x 1 x W`.
    Width,
}

pub fn strip_pool<T: Scalar>(x: &Tensor<T>, axis: StripAxis) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    let d = x.data();
    let planes = n * c;
    let out = match axis {
        StripAxis::Height => {
            let mut out = Vec::with_capacity(planes * h);
            for p in 0..planes {
                for row in d[p * h * w..(p + 1) * h * w].chunks_exact(w) {
                    out.push(row.iter().map(|v| v.f64()).sum::<f64>() / w as f64);
                }
            }
            Tensor::from_f64_parts(Shape(vec![n, c, h, 1]), out)
        }
        StripAxis::Width => {
            let mut out = vec![0.0f64; planes * w];
            for p in 0..planes {
                let acc = &mut out[p * w..(p + 1) * w];
                for row in d[p * h * w..(p + 1) * h * w].chunks_exact(w) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v.f64();
                    }
                }
                for a in acc.iter_mut() {
                    *a /= h as f64;
                }
            }
            Tensor::from_f64_parts(Shape(vec![n, c, 1, w]), out)
        }
    };
    Ok(out)
}

/// Spreads a strip-pool gradient back over the pooled axis.
pub fn strip_pool_backward<T: Scalar>(grad: &Tensor<T>, input: &Shape) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.nchw()?;
    let (gn, gc, gh, gw) = grad.nchw()?;
    debug_assert!(gn == n && gc == c && (gh == 1 || gh == h) && (gw == 1 || gw == w));
    let count = (if gh == 1 { h } else { 1 }) * (if gw == 1 { w } else { 1 });
    let inv = 1.0 / count as f64;
    let g = grad.data();
    let mut out = Vec::with_capacity(n * c * h * w);
    for p in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                let gi = (p * gh + if gh == 1 { 0 } else { y }) * gw + if gw == 1 { 0 } else { xx };
                out.push(g[gi].f64() * inv);
            }
        }
    }
    Ok(Tensor::from_f64_parts(input.clone(), out))
}

/// Mean over `H x W` per channel.
pub fn pool_global_avg<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    let out = x
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().map(|v| v.f64()).sum::<f64>() / (h * w) as f64)
        .collect();
    Ok(Tensor::from_f64_parts(Shape(vec![n, c, 1, 1]), out))
}

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Shape, Tensor};

/// What [`window_partition`] padded, so [`window_merge`] can undo it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadRecord {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window_h: usize,
    pub window_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl PadRecord {
    pub fn windows_h(&self) -> usize {
        (self.height + self.pad_h) / self.window_h
    }

    pub fn windows_w(&self) -> usize {
        (self.width + self.pad_w) / self.window_w
    }

    /// Windows per sample.
    pub fn windows_per_sample(&self) -> usize {
        self.windows_h() * self.windows_w()
    }

    pub fn windows_shape(&self) -> [usize; 4] {
        [self.batch * self.windows_per_sample(), self.channels, self.window_h, self.window_w]
    }
}

/// Zero-pads bottom/right to window multiples and cuts `[N, C, H, W]` into
/// `[N * nh * nw, C, wh, ww]`, windows in row-major order within each sample.
pub fn window_partition<T: Scalar>(x: &Tensor<T>, wh: usize, ww: usize) -> Result<(Tensor<T>, PadRecord)> {
    let (n, c, h, w) = x.nchw()?;
    if wh == 0 || ww == 0 {
        return Err(Error::invalid("window sizes must be >= 1"));
    }
    let pad = PadRecord {
        batch: n,
        channels: c,
        height: h,
        width: w,
        window_h: wh,
        window_w: ww,
        pad_h: h.div_ceil(wh) * wh - h,
        pad_w: w.div_ceil(ww) * ww - w,
    };
    let (nh, nw) = (pad.windows_h(), pad.windows_w());
    let d = x.data();
    let mut out = vec![T::zero(); n * nh * nw * c * wh * ww];
    let mut o = 0;
    for ni in 0..n {
        for i in 0..nh {
            for j in 0..nw {
                for ci in 0..c {
                    let plane = &d[(ni * c + ci) * h * w..][..h * w];
                    for y in 0..wh {
                        let sy = i * wh + y;
                        if sy < h {
                            let x0 = j * ww;
                            let valid = ww.min(w.saturating_sub(x0));
                            out[o..o + valid].copy_from_slice(&plane[sy * w + x0..][..valid]);
                        }
                        o += ww;
                    }
                }
            }
        }
    }
    Ok((Tensor::from_parts(Shape(pad.windows_shape().to_vec()), out), pad))
}

/// Reassembles windows and strips the padding recorded in `pad`.
pub fn window_merge<T: Scalar>(windows: &Tensor<T>, pad: &PadRecord) -> Result<Tensor<T>> {
    if windows.dims() != pad.windows_shape() {
        return Err(Error::InvalidShape {
            shape: windows.dims().to_vec(),
            reason: format!("pad record expects windows of shape {:?}", pad.windows_shape()),
        });
    }
    let PadRecord { batch: n, channels: c, height: h, width: w, window_h: wh, window_w: ww, .. } = *pad;
    let (nh, nw) = (pad.windows_h(), pad.windows_w());
    let d = windows.data();
    let mut out = vec![T::zero(); n * c * h * w];
    let mut o = 0;
    for ni in 0..n {
        for i in 0..nh {
            for j in 0..nw {
                for ci in 0..c {
                    let plane = &mut out[(ni * c + ci) * h * w..][..h * w];
                    for y in 0..wh {
                        let sy = i * wh + y;
                        if sy < h {
                            let x0 = j * ww;
                            let valid = ww.min(w.saturating_sub(x0));
                            plane[sy * w + x0..][..valid].copy_from_slice(&d[o..o + valid]);
                        }
                        o += ww;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![n, c, h, w]), out))
}

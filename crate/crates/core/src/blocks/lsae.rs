use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::params::ParamBuilder;
use crate::scalar::Scalar;

use super::layers::{ConvLayer, NormLayer};

/// Large-scale attention encoder: layer norm, then self-attention among the
/// pixels of each non-overlapping window.
///
/// `q` and `k` come from one 1x1 conv + BN producing `2C` channels, `v` from
/// another producing `C`. Windows are zero padded at the bottom/right and the
/// padding is cut off after merging. With spatial attention disabled the
/// block reduces to the `v` projection of the normalized input.
#[derive(Debug, Clone)]
pub struct LsaeParams {
    pub path: String,
    pub channels: usize,
    pub window: (usize, usize),
    pub heads: usize,
    pub norm: NormLayer,
    /// Absent when spatial attention is disabled.
    pub qk: Option<(ConvLayer, NormLayer)>,
    pub v: ConvLayer,
    pub v_bn: NormLayer,
}

impl LsaeParams {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        window: (usize, usize),
        heads: usize,
        spatial_attention: bool,
    ) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 {
            return Err(Error::Config(format!("lsae {name}: window sizes must be >= 1")));
        }
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!("lsae {name}: {heads} heads do not divide {channels} channels")));
        }
        let c = channels;
        b.scope(name, |b| {
            let norm = NormLayer::layer(b, "norm", c)?;
            let qk = if spatial_attention {
                Some((ConvLayer::pointwise(b, "qk", c, 2 * c)?, NormLayer::batch(b, "qk_bn", 2 * c)?))
            } else {
                None
            };
            Ok(LsaeParams {
                path: b.prefix().to_string(),
                channels,
                window,
                heads,
                norm,
                qk,
                v: ConvLayer::pointwise(b, "v", c, c)?,
                v_bn: NormLayer::batch(b, "v_bn", c)?,
            })
        })
    }

    pub fn spatial_attention(&self) -> bool {
        self.qk.is_some()
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_with_attention(s, x)?.0)
    }

    /// Output and, when spatial attention runs, the attention weights
    /// `[windows * heads, l, l]` with `l = wh * ww`.
    pub fn forward_with_attention<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<(Var<T>, Option<Var<T>>)> {
        let c = x.value().nchw()?.1;
        if c != self.channels {
            return Err(Error::AxisMismatch { axis: "channel", expected: self.channels, actual: c }.in_layer(&self.path));
        }
        let xn = self.norm.forward(s, x)?;
        let Some((qk_conv, qk_bn)) = &self.qk else {
            let v = self.v_bn.forward(s, &self.v.forward(s, &xn)?)?;
            return Ok((v, None));
        };
        let (wh, ww) = self.window;
        let (win, pad) = s.window_partition(&xn, wh, ww)?;
        let qk = qk_bn.forward(s, &qk_conv.forward(s, &win)?)?;
        let qk = s.split(&qk, 1, &[c, c])?;
        let v = self.v_bn.forward(s, &self.v.forward(s, &win)?)?;

        let batch = win.dims()[0] * self.heads;
        let d = self.head_dim();
        let l = wh * ww;
        let q = s.reshape(&qk[0], &[batch, d, l])?;
        let k = s.reshape(&qk[1], &[batch, d, l])?;
        let v = s.reshape(&v, &[batch, d, l])?;
        let logits = s.matmul(&s.transpose_last2(&q)?, &k)?;
        let attn = s.softmax(&s.scale(&logits, 1.0 / (d as f64).sqrt()))?;
        // out[:, i] = sum_j attn[i, j] v[:, j]
        let out = s.matmul(&v, &s.transpose_last2(&attn)?)?;
        let out = s.reshape(&out, &[win.dims()[0], c, wh, ww])?;
        Ok((s.window_merge(&out, &pad)?, Some(attn)))
    }
}

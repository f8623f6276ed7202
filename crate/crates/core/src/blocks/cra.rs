use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::params::ParamBuilder;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Conv2dSpec};

use super::layers::ConvLayer;

/// `ceil(log2 C) + 1`, rounded up to odd, at least 3.
pub fn cra_kernel_size(channels: usize) -> usize {
    let log2_ceil = channels.max(1).next_power_of_two().trailing_zeros() as usize;
    let k = log2_ceil + 1;
    let k = if k % 2 == 1 { k } else { k + 1 };
    k.max(3)
}

/// Channel relational attention: global average pool, a zero-padded 1-D
/// convolution across channels, sigmoid, per-channel scaling.
#[derive(Debug, Clone)]
pub struct CraParams {
    pub path: String,
    pub channels: usize,
    pub kernel: usize,
    /// Single-channel `k x 1` convolution run over the channel axis.
    pub conv: ConvLayer,
}

impl CraParams {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let k = cra_kernel_size(channels);
        b.scope(name, |b| {
            Ok(CraParams {
                path: b.prefix().to_string(),
                channels,
                kernel: k,
                conv: ConvLayer::new(b, "conv", (1, 1), (k, 1), Conv2dSpec::same(k, 1, 1), false)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let gate = self.gate(s, x)?;
        s.mul_broadcast(x, &gate)
    }

    /// Per-channel gate `N x C x 1 x 1`.
    pub fn gate<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, _, _) = x.value().nchw()?;
        if c != self.channels {
            return Err(Error::AxisMismatch { axis: "channel", expected: self.channels, actual: c }.in_layer(&self.path));
        }
        let pooled = s.reshape(&s.global_avg_pool(x)?, &[n, 1, c, 1])?;
        let mixed = s.reshape(&self.conv.forward(s, &pooled)?, &[n, c, 1, 1])?;
        Ok(s.activation(&mixed, Activation::Sigmoid))
    }
}

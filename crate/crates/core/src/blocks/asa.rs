use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::params::ParamBuilder;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Conv2dSpec, NormKind, StripAxis};

use super::layers::{ConvLayer, NormLayer};

pub const ASA_KERNEL: usize = 3;

/// Group count for the axial gates: the largest divisor of `channels` not
/// above 16.
pub fn asa_groups(channels: usize) -> usize {
    (1..=channels.min(16)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Axial spatial attention: per-axis means, a depthwise 1-D convolution,
/// group norm and a sigmoid give a height gate and a width gate.
#[derive(Debug, Clone)]
pub struct AsaParams {
    pub path: String,
    pub channels: usize,
    pub conv_h: ConvLayer,
    pub norm_h: NormLayer,
    pub conv_w: ConvLayer,
    pub norm_w: NormLayer,
}

impl AsaParams {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let c = channels;
        let k = ASA_KERNEL;
        let groups = NormKind::Group(asa_groups(c));
        b.scope(name, |b| {
            Ok(AsaParams {
                path: b.prefix().to_string(),
                channels,
                conv_h: ConvLayer::new(b, "conv_h", (c, c), (k, 1), Conv2dSpec::same(k, 1, c), true)?,
                norm_h: NormLayer::new(b, "gn_h", groups, c)?,
                conv_w: ConvLayer::new(b, "conv_w", (c, c), (1, k), Conv2dSpec::same(1, k, c), true)?,
                norm_w: NormLayer::new(b, "gn_w", groups, c)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (gh, gw) = self.gates(s, x)?;
        s.mul_broadcast(&s.mul_broadcast(x, &gh)?, &gw)
    }

    pub fn gates<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let c = x.value().nchw()?.1;
        if c != self.channels {
            return Err(Error::AxisMismatch { axis: "channel", expected: self.channels, actual: c }.in_layer(&self.path));
        }
        let xh = s.strip_pool(x, StripAxis::Height)?;
        let xw = s.strip_pool(x, StripAxis::Width)?;
        let gh = self.norm_h.forward(s, &self.conv_h.forward(s, &xh)?)?;
        let gw = self.norm_w.forward(s, &self.conv_w.forward(s, &xw)?)?;
        Ok((s.activation(&gh, Activation::Sigmoid), s.activation(&gw, Activation::Sigmoid)))
    }
}

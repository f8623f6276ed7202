use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::params::ParamBuilder;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Conv2dSpec, StripAxis};

use super::layers::{ConvLayer, NormLayer};

pub const GIG_DEFAULT_KERNEL: usize = 7;
pub const GIG_DEFAULT_RATIO: usize = 8;
pub const GIG_GATE_KERNEL: usize = 3;

/// Global insight generator: strip pooling along both axes, a depthwise
/// convolution over the joined strips, and two sigmoid gates applied to the
/// input.
#[derive(Debug, Clone)]
pub struct GigParams {
    pub path: String,
    pub channels: usize,
    pub kernel: usize,
    /// Channel reduction ratio. Kept as configuration only; no layer reduces
    /// channels, so every strip stays at `channels` wide.
    pub ratio: usize,
    /// Depthwise `K x 1` convolution along the joined `H + W` strip.
    pub strip_conv: ConvLayer,
    pub strip_bn: NormLayer,
    /// Depthwise `3 x 1` gate over the height strip.
    pub gate_h: ConvLayer,
    /// Depthwise `1 x 3` gate over the width strip.
    pub gate_w: ConvLayer,
}

impl GigParams {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 || channels == 0 {
            return Err(Error::Config(format!("gig {name}: kernel must be odd and channels >= 1 (K={kernel}, C={channels})")));
        }
        let c = channels;
        let gk = GIG_GATE_KERNEL;
        b.scope(name, |b| {
            Ok(GigParams {
                path: b.prefix().to_string(),
                channels,
                kernel,
                ratio: GIG_DEFAULT_RATIO,
                strip_conv: ConvLayer::new(b, "dw_strip", (c, c), (kernel, 1), Conv2dSpec { stride: (1, 1), padding: (kernel / 2, 0), groups: c }, false)?,
                strip_bn: NormLayer::batch(b, "strip_bn", c)?,
                gate_h: ConvLayer::new(b, "gate_h", (c, c), (gk, 1), Conv2dSpec::same(gk, 1, c), true)?,
                gate_w: ConvLayer::new(b, "gate_w", (c, c), (1, gk), Conv2dSpec::same(1, gk, c), true)?,
            })
        })
    }

    /// `max(8, C / ratio)`. Reported for reference; nothing consumes it.
    pub fn mip(&self) -> usize {
        (self.channels / self.ratio).max(8)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (gh, gw) = self.gates(s, x)?;
        s.mul_broadcast(&s.mul_broadcast(x, &gh)?, &gw)
    }

    /// The height gate `N x C x H x 1` and width gate `N x C x 1 x W`.
    pub fn gates<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let (n, c, h, w) = x.value().nchw()?;
        if c != self.channels {
            return Err(Error::AxisMismatch { axis: "channel", expected: self.channels, actual: c }.in_layer(&self.path));
        }
        let xh = s.strip_pool(x, StripAxis::Height)?;
        let xw = s.reshape(&s.strip_pool(x, StripAxis::Width)?, &[n, c, w, 1])?;
        let y = s.concat(&[&xh, &xw], 2)?;
        let y = self.strip_bn.forward(s, &self.strip_conv.forward(s, &y)?)?;
        let y = s.activation(&y, Activation::HSwish);
        let parts = s.split(&y, 2, &[h, w])?;
        let yw = s.reshape(&parts[1], &[n, c, 1, w])?;
        let gh = s.activation(&self.gate_h.forward(s, &parts[0])?, Activation::Sigmoid);
        let gw = s.activation(&self.gate_w.forward(s, &yw)?, Activation::Sigmoid);
        Ok((gh, gw))
    }
}

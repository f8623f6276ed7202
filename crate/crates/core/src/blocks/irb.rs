use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::params::ParamBuilder;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Conv2dSpec};

use super::layers::{ConvLayer, NormLayer};

/// Inverted residual block: 1x1 expand, 3x3 depthwise, 1x1 project.
#[derive(Debug, Clone)]
pub struct IrbParams {
    pub path: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
    pub expand: ConvLayer,
    pub expand_bn: NormLayer,
    pub depthwise: ConvLayer,
    pub depthwise_bn: NormLayer,
    pub project: ConvLayer,
    pub project_bn: NormLayer,
}

impl IrbParams {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        expansion: usize,
        stride: usize,
    ) -> Result<Self> {
        if expansion == 0 || !(stride == 1 || stride == 2) || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!(
                "irb {name}: need channels >= 1, expansion >= 1, stride 1 or 2 (got {in_channels}->{out_channels}, t={expansion}, stride {stride})"
            )));
        }
        let hidden = in_channels * expansion;
        b.scope(name, |b| {
            Ok(IrbParams {
                path: b.prefix().to_string(),
                in_channels,
                out_channels,
                expansion,
                stride,
                expand: ConvLayer::pointwise(b, "expand", in_channels, hidden)?,
                expand_bn: NormLayer::batch(b, "expand_bn", hidden)?,
                depthwise: ConvLayer::new(b, "depthwise", (hidden, hidden), (3, 3), Conv2dSpec::new(stride, 1, hidden), false)?,
                depthwise_bn: NormLayer::batch(b, "depthwise_bn", hidden)?,
                project: ConvLayer::pointwise(b, "project", hidden, out_channels)?,
                project_bn: NormLayer::batch(b, "project_bn", out_channels)?,
            })
        })
    }

    pub fn hidden_channels(&self) -> usize {
        self.in_channels * self.expansion
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let c = x.value().nchw()?.1;
        if c != self.in_channels {
            return Err(Error::AxisMismatch { axis: "channel", expected: self.in_channels, actual: c }.in_layer(&self.path));
        }
        let y = self.expand.forward(s, x)?;
        let y = s.activation(&self.expand_bn.forward(s, &y)?, Activation::HSwish);
        let y = self.depthwise.forward(s, &y)?;
        let y = s.activation(&self.depthwise_bn.forward(s, &y)?, Activation::HSwish);
        let y = self.project_bn.forward(s, &self.project.forward(s, &y)?)?;
        if self.has_residual() {
            s.add(x, &y)
        } else {
            Ok(y)
        }
    }
}

//! Parameterized building layers: convolution, normalization and linear.

use crate::autodiff::{BnUpdate, Session, Var};
use crate::error::Result;
use crate::params::{ParamBuilder, ParamId, ParamKind};
use crate::scalar::Scalar;
use crate::tensor::{Conv2dSpec, NormKind, NormMode};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub path: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub spec: Conv2dSpec,
}

impl ConvLayer {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: (usize, usize),
        spec: Conv2dSpec,
        bias: bool,
    ) -> Result<Self> {
        b.scope(name, |b| {
            let fan_in = cin / spec.groups * kernel.0 * kernel.1;
            let weight = b.truncated_normal("weight", &[cout, cin / spec.groups, kernel.0, kernel.1], fan_in)?;
            let bias = if bias { Some(b.constant("bias", &[cout], 0.0, ParamKind::Learnable)?) } else { None };
            Ok(ConvLayer {
                path: b.prefix().to_string(),
                weight,
                bias,
                in_channels: cin,
                out_channels: cout,
                kernel,
                spec,
            })
        })
    }

    /// Bias-free 1x1 convolution.
    pub fn pointwise<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Self::new(b, name, (cin, cout), (1, 1), Conv2dSpec::default(), false)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = s.param(self.weight);
        let b = self.bias.map(|id| s.param(id));
        s.conv2d(x, &w, b.as_ref(), self.spec).map_err(|e| e.in_layer(&self.path))
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels / self.spec.groups * self.kernel.0 * self.kernel.1
            + if self.bias.is_some() { self.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct NormLayer {
    pub path: String,
    pub kind: NormKind,
    pub channels: usize,
    pub scale: ParamId,
    pub shift: ParamId,
    /// `(running_mean, running_var)` for batch norm.
    pub running: Option<(ParamId, ParamId)>,
    pub eps: f64,
}

impl NormLayer {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, kind: NormKind, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            let scale = b.constant("scale", &[channels], 1.0, ParamKind::Learnable)?;
            let shift = b.constant("shift", &[channels], 0.0, ParamKind::Learnable)?;
            let running = if kind == NormKind::Batch {
                Some((
                    b.constant("running_mean", &[channels], 0.0, ParamKind::Buffer)?,
                    b.constant("running_var", &[channels], 1.0, ParamKind::Buffer)?,
                ))
            } else {
                None
            };
            Ok(NormLayer { path: b.prefix().to_string(), kind, channels, scale, shift, running, eps: NORM_EPS })
        })
    }

    pub fn batch<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Self::new(b, name, NormKind::Batch, channels)
    }

    pub fn layer<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Self::new(b, name, NormKind::Layer, channels)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let scale = s.param(self.scale);
        let shift = s.param(self.shift);
        let running = self.running.map(|(m, v)| (s.store().get(m), s.store().get(v)));
        let (y, saved) = s
            .normalize(x, &scale, &shift, self.kind, running, s.mode(), self.eps)
            .map_err(|e| e.in_layer(&self.path))?;
        if let (NormMode::Train, Some((m, v))) = (s.mode(), self.running) {
            let count = saved.count as f64;
            let correction = if saved.count > 1 { count / (count - 1.0) } else { 1.0 };
            s.push_bn_update(BnUpdate {
                running_mean: m,
                running_var: v,
                batch_mean: saved.mean,
                batch_var: saved.var.iter().map(|v| v * correction).collect(),
                momentum: BN_MOMENTUM,
            });
        }
        Ok(y)
    }

    /// Affine scale and shift; running statistics are not learnable.
    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub path: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        b.scope(name, |b| {
            let weight = b.truncated_normal("weight", &[out_features, in_features], in_features)?;
            let bias = b.constant("bias", &[out_features], 0.0, ParamKind::Learnable)?;
            Ok(Linear { path: b.prefix().to_string(), weight, bias, in_features, out_features })
        })
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.linear(x, &w, Some(&b)).map_err(|e| e.in_layer(&self.path))
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

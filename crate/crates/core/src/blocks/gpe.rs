use crate::autodiff::{Session, Var};
use crate::error::Result;
use crate::params::ParamBuilder;
use crate::scalar::Scalar;

use super::gpm::GpmConfig;
use super::layers::NormLayer;
use super::{GpmParams, IrbParams};

/// Dual pre-norm residual block: `y = x + gpm(ln1(x))`, `z = y + irb(ln2(y))`.
#[derive(Debug, Clone)]
pub struct GpeBlockParams {
    pub path: String,
    pub channels: usize,
    pub norm1: NormLayer,
    pub gpm: GpmParams,
    pub norm2: NormLayer,
    pub irb: IrbParams,
}

impl GpeBlockParams {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cfg: GpmConfig) -> Result<Self> {
        let c = cfg.channels;
        b.scope(name, |b| {
            Ok(GpeBlockParams {
                path: b.prefix().to_string(),
                channels: c,
                norm1: NormLayer::layer(b, "norm1", c)?,
                gpm: GpmParams::new(b, "gpm", cfg)?,
                norm2: NormLayer::layer(b, "norm2", c)?,
                irb: IrbParams::new(b, "irb", c, c, cfg.expansion, 1)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = s.add(x, &self.gpm.forward(s, &self.norm1.forward(s, x)?)?)?;
        s.add(&y, &self.irb.forward(s, &self.norm2.forward(s, &y)?)?)
    }
}

use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::params::ParamBuilder;
use crate::scalar::Scalar;

use super::{AsaParams, CraParams, GigParams, IrbParams, LsaeParams};

/// Which GPM components are built. Disabled components act as identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub use_gig: bool,
    pub use_lsae: bool,
    pub use_asa_cra: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags { use_gig: true, use_lsae: true, use_asa_cra: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GpmConfig {
    pub channels: usize,
    pub gig_kernel: usize,
    pub window: (usize, usize),
    pub heads: usize,
    pub expansion: usize,
    pub flags: AblationFlags,
}

/// Global-to-parallel multi-scale encoding: a global gate over all channels,
/// then an attention branch and an inverted-residual branch over the two
/// channel halves, concatenated back.
#[derive(Debug, Clone)]
pub struct GpmParams {
    pub path: String,
    pub channels: usize,
    pub flags: AblationFlags,
    pub gig: Option<GigParams>,
    pub lsae: Option<LsaeParams>,
    pub asa: Option<AsaParams>,
    pub irb: IrbParams,
    pub cra: Option<CraParams>,
}

impl GpmParams {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cfg: GpmConfig) -> Result<Self> {
        if cfg.channels == 0 || cfg.channels % 2 != 0 {
            return Err(Error::Config(format!("gpm {name}: channel count {} must be even", cfg.channels)));
        }
        let half = cfg.channels / 2;
        let f = cfg.flags;
        b.scope(name, |b| {
            let gig = f.use_gig.then(|| GigParams::new(b, "gig", cfg.channels, cfg.gig_kernel)).transpose()?;
            let lsae = f.use_lsae.then(|| LsaeParams::new(b, "lsae", half, cfg.window, cfg.heads, true)).transpose()?;
            let asa = (f.use_lsae && f.use_asa_cra).then(|| AsaParams::new(b, "asa", half)).transpose()?;
            let irb = IrbParams::new(b, "irb", half, half, cfg.expansion, 1)?;
            let cra = f.use_asa_cra.then(|| CraParams::new(b, "cra", half)).transpose()?;
            Ok(GpmParams { path: b.prefix().to_string(), channels: cfg.channels, flags: f, gig, lsae, asa, irb, cra })
        })
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let c = x.value().nchw()?.1;
        if c != self.channels {
            return Err(Error::AxisMismatch { axis: "channel", expected: self.channels, actual: c }.in_layer(&self.path));
        }
        let y = match &self.gig {
            Some(gig) => gig.forward(s, x)?,
            None => x.clone(),
        };
        let half = self.channels / 2;
        let halves = s.split(&y, 1, &[half, half])?;
        let mut b0 = halves[0].clone();
        if let Some(lsae) = &self.lsae {
            b0 = lsae.forward(s, &b0)?;
        }
        if let Some(asa) = &self.asa {
            b0 = asa.forward(s, &b0)?;
        }
        let mut b1 = self.irb.forward(s, &halves[1])?;
        if let Some(cra) = &self.cra {
            b1 = cra.forward(s, &b1)?;
        }
        s.concat(&[&b0, &b1], 1)
    }
}

use crate::autodiff::{Session, Var};
use crate::blocks::{ConvLayer, GpeBlockParams, GpmConfig, IrbParams, Linear, NormLayer};
use crate::error::{Error, Result};
use crate::params::{seeded_rng, ParamBuilder, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Conv2dSpec, NormMode, Tensor};

use super::config::ModelConfig;

pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone)]
pub enum Block {
    Irb(IrbParams),
    Gpe(GpeBlockParams),
}

impl Block {
    pub fn path(&self) -> &str {
        match self {
            Block::Irb(p) => &p.path,
            Block::Gpe(p) => &p.path,
        }
    }

    fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            Block::Irb(p) => p.forward(s, x),
            Block::Gpe(p) => p.forward(s, x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    /// 1-based stage number.
    pub index: usize,
    pub downsample: Option<IrbParams>,
    pub blocks: Vec<Block>,
}

/// An H-GPE network and its parameters.
///
/// Layers, and therefore parameters, are created in dataflow order: stem
/// conv, stem IRB, each stage (downsample IRB, then blocks), then the head.
#[derive(Clone)]
pub struct HGpeModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub stem_conv: ConvLayer,
    pub stem_bn: NormLayer,
    pub stem_irb: IrbParams,
    pub stages: Vec<Stage>,
    pub head: Linear,
}

/// Spatial outputs of a forward pass, for tracing.
#[derive(Debug, Clone)]
pub struct FeatureTrace {
    /// `(name, dims)` for the stem and each stage output.
    pub stages: Vec<(String, Vec<usize>)>,
}

/// Builds a model with seeded initialization.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<HGpeModel<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let mut b = ParamBuilder::new(&mut store, &mut rng);
    let t = cfg.expansion;
    let c0 = cfg.out_channels[0];

    let (stem_conv, stem_bn, stem_irb) = b.scope("stem", |b| -> Result<_> {
        Ok((
            ConvLayer::new(b, "conv", (INPUT_CHANNELS, c0), (3, 3), Conv2dSpec::new(2, 1, 1), false)?,
            NormLayer::batch(b, "bn", c0)?,
            IrbParams::new(b, "irb", c0, c0, t, 1)?,
        ))
    })?;

    let mut stages = Vec::with_capacity(4);
    let mut prev = c0;
    for index in 1..=4 {
        let c = cfg.out_channels[index - 1];
        let stage = b.scope(&format!("stage{index}"), |b| -> Result<Stage> {
            let downsample = if index > 1 { Some(IrbParams::new(b, "down", prev, c, t, 2)?) } else { None };
            let mut blocks = Vec::new();
            for i in 0..cfg.stack_count[index - 1] {
                b.scope(&format!("block{i}"), |b| -> Result<()> {
                    if cfg.has_gpe(index) {
                        let w = cfg.window_sizes[index - 1];
                        let gpm = GpmConfig {
                            channels: c,
                            gig_kernel: cfg.gig_kernel,
                            window: (w, w),
                            heads: cfg.heads,
                            expansion: t,
                            flags: cfg.ablation,
                        };
                        blocks.push(Block::Gpe(GpeBlockParams::new(b, "gpe", gpm)?));
                    }
                    let cin = if index == 1 && i == 0 { prev } else { c };
                    blocks.push(Block::Irb(IrbParams::new(b, "irb", cin, c, t, 1)?));
                    Ok(())
                })?;
            }
            Ok(Stage { index, downsample, blocks })
        })?;
        stages.push(stage);
        prev = c;
    }
    let head = b.scope("head", |b| Linear::new(b, "fc", prev, cfg.num_classes))?;
    Ok(HGpeModel { config: cfg.clone(), store, stem_conv, stem_bn, stem_irb, stages, head })
}

impl<T: Scalar> HGpeModel<T> {
    /// Backbone features (stage-4 output), optionally skipping GPE-Blocks.
    fn features(&self, s: &Session<'_, T>, x: &Var<T>, skip_gpe: bool, trace: &mut Option<FeatureTrace>) -> Result<Var<T>> {
        let (_, c, h, w) = x.value().nchw()?;
        if c != INPUT_CHANNELS {
            return Err(Error::AxisMismatch { axis: "channel", expected: INPUT_CHANNELS, actual: c }.in_layer("stem/conv"));
        }
        if h < 32 || w < 32 {
            return Err(Error::invalid(format!("input must be at least 32x32, got {h}x{w}")));
        }
        let y = self.stem_conv.forward(s, x)?;
        let y = s.activation(&self.stem_bn.forward(s, &y)?, Activation::HSwish);
        let mut y = self.stem_irb.forward(s, &y)?;
        if let Some(t) = trace {
            t.stages.push(("stem".into(), y.dims().to_vec()));
        }
        for stage in &self.stages {
            if let Some(down) = &stage.downsample {
                y = down.forward(s, &y)?;
            }
            for block in &stage.blocks {
                if skip_gpe && matches!(block, Block::Gpe(_)) {
                    continue;
                }
                y = block.forward(s, &y)?;
            }
            if let Some(t) = trace {
                t.stages.push((format!("stage{}", stage.index), y.dims().to_vec()));
            }
        }
        Ok(y)
    }

    fn head_forward(&self, s: &Session<'_, T>, features: &Var<T>) -> Result<Var<T>> {
        let (n, c, _, _) = features.value().nchw()?;
        let pooled = s.reshape(&s.global_avg_pool(features)?, &[n, c])?;
        self.head.forward(s, &pooled)
    }

    /// Logits `[N, num_classes]` inside a session.
    pub fn forward(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let f = self.features(s, x, false, &mut None)?;
        self.head_forward(s, &f)
    }

    /// Stage-4 feature map without the classifier head.
    pub fn forward_backbone(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.features(s, x, false, &mut None)
    }

    /// Logits of the same network with every GPE-Block removed.
    pub fn forward_skeleton(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let f = self.features(s, x, true, &mut None)?;
        self.head_forward(s, &f)
    }

    pub fn forward_traced(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<(Var<T>, FeatureTrace)> {
        let mut trace = Some(FeatureTrace { stages: Vec::new() });
        let f = self.features(s, x, false, &mut trace)?;
        Ok((self.head_forward(s, &f)?, trace.expect("trace")))
    }

    /// Every GPE-Block in stage order.
    pub fn gpe_blocks(&self) -> impl Iterator<Item = &GpeBlockParams> {
        self.stages.iter().flat_map(|st| st.blocks.iter()).filter_map(|b| match b {
            Block::Gpe(p) => Some(p),
            Block::Irb(_) => None,
        })
    }
}

/// Logits for `x` without recording gradients. Training mode uses batch
/// statistics and leaves the running statistics untouched.
pub fn model_forward<T: Scalar>(m: &HGpeModel<T>, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
    let s = Session::with_tracking(&m.store, mode, false);
    let input = s.input(x.clone());
    Ok(m.forward(&s, &input)?.into_tensor())
}

use serde::{Deserialize, Serialize};

use crate::blocks::{AblationFlags, GIG_DEFAULT_KERNEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    S,
    T,
    N,
    #[serde(rename = "custom")]
    Custom,
}

impl Variant {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "S" | "SMALL" => Some(Variant::S),
            "T" | "TINY" => Some(Variant::T),
            "N" | "NANO" => Some(Variant::N),
            _ => None,
        }
    }

    /// Published `(params in millions, GFLOPs)` at 224x224, when the variant has them.
    pub fn reference(self) -> Option<(f64, f64)> {
        match self {
            Variant::S => Some((5.6, 1.4)),
            Variant::T => Some((2.3, 0.5)),
            Variant::N => Some((1.2, 0.3)),
            Variant::Custom => None,
        }
    }
}

/// Hyperparameters of an H-GPE model.
///
/// Stage 1 is a stack of inverted residual blocks. Each later stage starts
/// with a stride-2 IRB and then repeats `GPE-Block + IRB` `stack_count`
/// times, or plain IRBs when its window size is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stack_count: [usize; 4],
    pub out_channels: [usize; 4],
    /// IRB expansion ratio.
    pub expansion: usize,
    /// Attention window per stage; 0 means the stage has no GPE-Blocks.
    pub window_sizes: [usize; 4],
    pub gig_kernel: usize,
    pub heads: usize,
    pub num_classes: usize,
    /// `[height, width]`.
    pub input_size: [usize; 2],
    pub ablation: AblationFlags,
}

/// Default windows: 14 for stages 2 and 3, 7 for stage 4.
pub const DEFAULT_WINDOWS: [usize; 4] = [0, 14, 14, 7];

impl ModelConfig {
    pub fn preset(variant: Variant) -> Self {
        let (out_channels, expansion) = match variant {
            Variant::S => ([64, 128, 192, 256], 6),
            Variant::T => ([64, 96, 128, 160], 2),
            Variant::N | Variant::Custom => ([48, 64, 80, 112], 2),
        };
        ModelConfig {
            variant,
            stack_count: [3, 2, 4, 3],
            out_channels,
            expansion,
            window_sizes: DEFAULT_WINDOWS,
            gig_kernel: GIG_DEFAULT_KERNEL,
            heads: 1,
            num_classes: 1000,
            input_size: [224, 224],
            ablation: AblationFlags::default(),
        }
    }

    /// Smallest configuration exercising every block, for tests and toy training.
    pub fn micro() -> Self {
        ModelConfig {
            variant: Variant::Custom,
            stack_count: [1, 1, 1, 1],
            out_channels: [8, 12, 16, 20],
            expansion: 2,
            window_sizes: [0, 4, 4, 2],
            gig_kernel: GIG_DEFAULT_KERNEL,
            heads: 1,
            num_classes: 2,
            input_size: [32, 32],
            ablation: AblationFlags::default(),
        }
    }

    pub fn has_gpe(&self, stage: usize) -> bool {
        stage >= 2 && self.window_sizes[stage - 1] > 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stack_count.iter().any(|&n| n == 0) {
            return bad(format!("stack_count entries must be >= 1, got {:?}", self.stack_count));
        }
        if self.out_channels.iter().any(|&c| c == 0) {
            return bad(format!("out_channels entries must be >= 1, got {:?}", self.out_channels));
        }
        if self.window_sizes[0] != 0 {
            return bad("stage 1 holds only IRBs; window_sizes[0] must be 0".into());
        }
        if self.expansion == 0 {
            return bad("expansion must be >= 1".into());
        }
        if self.gig_kernel % 2 == 0 {
            return bad(format!("gig_kernel must be odd, got {}", self.gig_kernel));
        }
        if self.num_classes == 0 || self.heads == 0 {
            return bad("num_classes and heads must be >= 1".into());
        }
        if self.input_size.iter().any(|&s| s < 32) {
            return bad(format!("input_size must be at least 32x32, got {:?}", self.input_size));
        }
        for stage in 2..=4 {
            let c = self.out_channels[stage - 1];
            if self.has_gpe(stage) {
                if c % 2 != 0 {
                    return bad(format!("stage {stage} has GPE-Blocks, so out_channels {c} must be even"));
                }
                if (c / 2) % self.heads != 0 {
                    return bad(format!("stage {stage}: {} heads do not divide branch width {}", self.heads, c / 2));
                }
            }
        }
        Ok(())
    }
}

/// Attention window of stage 2, 3 or 4.
pub fn stage_window_size(stage_index: usize, cfg: &ModelConfig) -> Result<usize> {
    if !(2..=4).contains(&stage_index) {
        return Err(Error::invalid(format!("stage index {stage_index} has no window; expected 2, 3 or 4")));
    }
    Ok(cfg.window_sizes[stage_index - 1])
}

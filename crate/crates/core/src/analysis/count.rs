use std::fmt::Write as _;

use crate::backbone::{Block, HGpeModel, Stage, INPUT_CHANNELS};
use crate::blocks::{
    AsaParams, ConvLayer, CraParams, GigParams, GpeBlockParams, GpmParams, IrbParams, Linear, LsaeParams, NormLayer,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::conv2d_output_size;

use super::closed_form::{gpm_closed_form, wmhsa_closed_form};

type Dims = [usize; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopConvention {
    /// Multiply-accumulates only.
    Macs,
    /// Two flops per MAC plus two per normalized, activated or softmaxed element.
    TwiceMacs,
}

impl FlopConvention {
    pub fn name(self) -> &'static str {
        match self {
            FlopConvention::Macs => "macs",
            FlopConvention::TwiceMacs => "2x_macs",
        }
    }

    pub fn flops(self, macs: u64, elementwise: u64) -> u64 {
        match self {
            FlopConvention::Macs => macs,
            FlopConvention::TwiceMacs => 2 * macs + 2 * elementwise,
        }
    }
}

/// One parameterized layer or parameter-free op, at batch size 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub path: String,
    pub params: u64,
    pub macs: u64,
    /// Elements passing through a normalization, activation or softmax.
    pub elementwise: u64,
}

impl LayerRow {
    pub fn is_head(&self) -> bool {
        self.path.starts_with("head/")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub path: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub note: Option<String>,
}

/// Block-level shapes along the main path, from the stem to the logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub rows: Vec<TraceRow>,
}

impl ShapeTrace {
    /// Every row's input equals the previous row's output.
    pub fn check_chain(&self) -> Result<()> {
        for pair in self.rows.windows(2) {
            if pair[0].output != pair[1].input {
                return Err(Error::InvalidShape {
                    shape: pair[1].input.clone(),
                    reason: format!("{} expects the output {:?} of {}", pair[1].path, pair[0].output, pair[0].path),
                });
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.path.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:<18}  {:<18}  note\n", "path", "input", "output");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:<18}  {:<18}  {}",
                r.path,
                format!("{:?}", r.input),
                format!("{:?}", r.output),
                r.note.as_deref().unwrap_or("")
            );
        }
        out
    }
}

/// Closed-form and counted GPM cost for one stage, with the windowed
/// attention it is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEstimate {
    pub stage: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub head_dim: usize,
    pub gpm_closed_params: u64,
    pub gpm_closed_flops: f64,
    /// Counted over the first GPM of the stage.
    pub gpm_counted_params: u64,
    pub gpm_counted_macs: u64,
    pub wmhsa_params: u64,
    pub wmhsa_flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub input_size: (usize, usize),
    pub rows: Vec<LayerRow>,
    pub stages: Vec<StageEstimate>,
    pub trace: ShapeTrace,
}

impl ComplexityReport {
    fn total(&self, include_head: bool, f: impl Fn(&LayerRow) -> u64) -> u64 {
        self.rows.iter().filter(|r| include_head || !r.is_head()).map(f).sum()
    }

    pub fn params(&self, include_head: bool) -> u64 {
        self.total(include_head, |r| r.params)
    }

    pub fn macs(&self, include_head: bool) -> u64 {
        self.total(include_head, |r| r.macs)
    }

    pub fn elementwise(&self, include_head: bool) -> u64 {
        self.total(include_head, |r| r.elementwise)
    }

    pub fn flops(&self, convention: FlopConvention, include_head: bool) -> u64 {
        convention.flops(self.macs(include_head), self.elementwise(include_head))
    }

    /// The convention whose flop count is closest, in ratio, to `target`.
    pub fn closest_convention(&self, target: f64, include_head: bool) -> FlopConvention {
        let miss = |c| (self.flops(c, include_head) as f64 / target).ln().abs();
        if miss(FlopConvention::Macs) <= miss(FlopConvention::TwiceMacs) {
            FlopConvention::Macs
        } else {
            FlopConvention::TwiceMacs
        }
    }

    /// Aligned table with totals.
    pub fn render_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.path.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>10}  {:>14}  {:>12}\n", "layer", "params", "macs", "elementwise");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>10}  {:>14}  {:>12}", r.path, r.params, r.macs, r.elementwise);
        }
        let (h, w) = self.input_size;
        for (label, head) in [("backbone", false), ("with head", true)] {
            let _ = writeln!(
                out,
                "{label} at {h}x{w}: params {} ({:.3}M), macs {} ({:.3}G), flops[2x_macs] {:.3}G",
                self.params(head),
                self.params(head) as f64 / 1e6,
                self.macs(head),
                self.macs(head) as f64 / 1e9,
                self.flops(FlopConvention::TwiceMacs, head) as f64 / 1e9
            );
        }
        for s in &self.stages {
            let _ = writeln!(
                out,
                "stage{} gpm C={} {}x{} window {}: closed-form params {} flops {:.0}; counted params {} macs {}; wmhsa params {} flops {}",
                s.stage,
                s.channels,
                s.height,
                s.width,
                s.window,
                s.gpm_closed_params,
                s.gpm_closed_flops,
                s.gpm_counted_params,
                s.gpm_counted_macs,
                s.wmhsa_params,
                s.wmhsa_flops
            );
        }
        out
    }

    /// One layer per line: `path params macs`.
    pub fn render_records(&self) -> String {
        self.rows.iter().map(|r| format!("{} {} {}\n", r.path, r.params, r.macs)).collect()
    }
}

/// Shape-only walk over a model, mirroring its forward pass.
struct Walker {
    rows: Vec<LayerRow>,
}

fn numel(x: Dims) -> u64 {
    x.iter().map(|&d| d as u64).product()
}

fn expect_channels(path: &str, expected: usize, x: Dims) -> Result<()> {
    if x[1] != expected {
        return Err(Error::AxisMismatch { axis: "channel", expected, actual: x[1] }.in_layer(path));
    }
    Ok(())
}

impl Walker {
    fn row(&mut self, path: String, params: u64, macs: u64, elementwise: u64) {
        self.rows.push(LayerRow { path, params, macs, elementwise });
    }

    fn conv(&mut self, l: &ConvLayer, x: Dims) -> Result<Dims> {
        expect_channels(&l.path, l.in_channels, x)?;
        let bad = || Error::invalid(format!("input {x:?} too small for kernel {:?}", l.kernel)).in_layer(&l.path);
        let oh = conv2d_output_size(x[2], l.kernel.0, l.spec.stride.0, l.spec.padding.0).ok_or_else(bad)?;
        let ow = conv2d_output_size(x[3], l.kernel.1, l.spec.stride.1, l.spec.padding.1).ok_or_else(bad)?;
        let y = [x[0], l.out_channels, oh, ow];
        let macs = numel(y) * (l.in_channels / l.spec.groups * l.kernel.0 * l.kernel.1) as u64;
        self.row(l.path.clone(), l.param_count() as u64, macs, 0);
        Ok(y)
    }

    fn norm(&mut self, l: &NormLayer, x: Dims) -> Result<Dims> {
        expect_channels(&l.path, l.channels, x)?;
        self.row(l.path.clone(), l.param_count() as u64, 0, numel(x));
        Ok(x)
    }

    fn elementwise(&mut self, path: String, x: Dims) -> Dims {
        self.row(path, 0, 0, numel(x));
        x
    }

    fn irb(&mut self, p: &IrbParams, x: Dims) -> Result<Dims> {
        let y = self.conv(&p.expand, x)?;
        let y = self.norm(&p.expand_bn, y)?;
        let y = self.elementwise(format!("{}/expand_act", p.path), y);
        let y = self.conv(&p.depthwise, y)?;
        let y = self.norm(&p.depthwise_bn, y)?;
        let y = self.elementwise(format!("{}/depthwise_act", p.path), y);
        let y = self.conv(&p.project, y)?;
        self.norm(&p.project_bn, y)
    }

    fn gig(&mut self, p: &GigParams, x: Dims) -> Result<Dims> {
        let [n, c, h, w] = x;
        let y = self.conv(&p.strip_conv, [n, c, h + w, 1])?;
        let y = self.norm(&p.strip_bn, y)?;
        self.elementwise(format!("{}/strip_act", p.path), y);
        let gh = self.conv(&p.gate_h, [n, c, h, 1])?;
        self.elementwise(format!("{}/gate_h_act", p.path), gh);
        let gw = self.conv(&p.gate_w, [n, c, 1, w])?;
        self.elementwise(format!("{}/gate_w_act", p.path), gw);
        Ok(x)
    }

    fn lsae(&mut self, p: &LsaeParams, x: Dims) -> Result<Dims> {
        let xn = self.norm(&p.norm, x)?;
        let Some((qk, qk_bn)) = &p.qk else {
            let v = self.conv(&p.v, xn)?;
            return self.norm(&p.v_bn, v);
        };
        let (wh, ww) = p.window;
        let [n, c, h, w] = xn;
        let windows = n * h.div_ceil(wh) * w.div_ceil(ww);
        let win = [windows, c, wh, ww];
        let q = self.conv(qk, win)?;
        self.norm(qk_bn, q)?;
        let v = self.conv(&p.v, win)?;
        self.norm(&p.v_bn, v)?;
        let (b, d, l) = ((windows * p.heads) as u64, p.head_dim() as u64, (wh * ww) as u64);
        self.row(format!("{}/attention", p.path), 0, 2 * b * l * l * d, b * l * l);
        Ok(x)
    }

    fn asa(&mut self, p: &AsaParams, x: Dims) -> Result<Dims> {
        let [n, c, h, w] = x;
        let gh = self.conv(&p.conv_h, [n, c, h, 1])?;
        let gh = self.norm(&p.norm_h, gh)?;
        self.elementwise(format!("{}/gate_h_act", p.path), gh);
        let gw = self.conv(&p.conv_w, [n, c, 1, w])?;
        let gw = self.norm(&p.norm_w, gw)?;
        self.elementwise(format!("{}/gate_w_act", p.path), gw);
        Ok(x)
    }

    fn cra(&mut self, p: &CraParams, x: Dims) -> Result<Dims> {
        expect_channels(&p.path, p.channels, x)?;
        let [n, c, _, _] = x;
        self.conv(&p.conv, [n, 1, c, 1])?;
        self.elementwise(format!("{}/gate_act", p.path), [n, c, 1, 1]);
        Ok(x)
    }

    fn gpm(&mut self, p: &GpmParams, x: Dims) -> Result<Dims> {
        expect_channels(&p.path, p.channels, x)?;
        if let Some(g) = &p.gig {
            self.gig(g, x)?;
        }
        let half = [x[0], p.channels / 2, x[2], x[3]];
        if let Some(l) = &p.lsae {
            self.lsae(l, half)?;
        }
        if let Some(a) = &p.asa {
            self.asa(a, half)?;
        }
        self.irb(&p.irb, half)?;
        if let Some(c) = &p.cra {
            self.cra(c, half)?;
        }
        Ok(x)
    }

    fn gpe(&mut self, p: &GpeBlockParams, x: Dims) -> Result<Dims> {
        let y = self.norm(&p.norm1, x)?;
        let y = self.gpm(&p.gpm, y)?;
        let z = self.norm(&p.norm2, y)?;
        self.irb(&p.irb, z)
    }

    fn linear(&mut self, l: &Linear, n: usize, features: usize) -> Result<()> {
        if features != l.in_features {
            return Err(Error::AxisMismatch { axis: "feature", expected: l.in_features, actual: features }.in_layer(&l.path));
        }
        let params = (l.in_features * l.out_features + l.out_features) as u64;
        self.row(l.path.clone(), params, (n * l.in_features * l.out_features) as u64, 0);
        Ok(())
    }
}

fn trace_row(path: &str, input: Dims, output: Dims, note: Option<String>) -> TraceRow {
    TraceRow { path: path.to_string(), input: input.to_vec(), output: output.to_vec(), note }
}

fn window_note(p: &GpeBlockParams, x: Dims) -> Option<String> {
    let lsae = p.gpm.lsae.as_ref()?;
    let (wh, ww) = lsae.window;
    let (ph, pw) = (x[2].div_ceil(wh) * wh, x[3].div_ceil(ww) * ww);
    let padded = if (ph, pw) != (x[2], x[3]) { format!(", padded to {ph}x{pw}") } else { String::new() };
    Some(format!("window {wh}x{ww}{padded}, {} windows", (ph / wh) * (pw / ww)))
}

fn walk_stage(wk: &mut Walker, stage: &Stage, mut x: Dims, trace: &mut Vec<TraceRow>) -> Result<Dims> {
    if let Some(down) = &stage.downsample {
        let y = wk.irb(down, x)?;
        trace.push(trace_row(&down.path, x, y, Some("stride 2".into())));
        x = y;
    }
    for block in &stage.blocks {
        let (y, note) = match block {
            Block::Irb(p) => (wk.irb(p, x)?, None),
            Block::Gpe(p) => (wk.gpe(p, x)?, window_note(p, x)),
        };
        trace.push(trace_row(block.path(), x, y, note));
        x = y;
    }
    Ok(x)
}

/// Parameters and MACs of every layer at batch size 1, the block-level shape
/// trace, and the closed-form GPM comparison for each GPE stage.
pub fn complexity<T: Scalar>(m: &HGpeModel<T>, input_size: (usize, usize)) -> Result<ComplexityReport> {
    let (h, w) = input_size;
    let mut wk = Walker { rows: Vec::new() };
    let mut trace = Vec::new();
    let x = [1, INPUT_CHANNELS, h, w];
    let y = wk.conv(&m.stem_conv, x)?;
    let y = wk.norm(&m.stem_bn, y)?;
    let y = wk.elementwise("stem/act".into(), y);
    trace.push(trace_row("stem/conv+bn+act", x, y, None));
    let z = wk.irb(&m.stem_irb, y)?;
    trace.push(trace_row(&m.stem_irb.path, y, z, None));
    let mut x = z;

    let mut stages = Vec::new();
    for stage in &m.stages {
        let before = wk.rows.len();
        x = walk_stage(&mut wk, stage, x, &mut trace)?;
        let first_gpe = stage.blocks.iter().find_map(|b| match b {
            Block::Gpe(p) => Some(p),
            Block::Irb(_) => None,
        });
        if let Some(p) = first_gpe {
            let [_, c, sh, sw] = x;
            let prefix = format!("{}/", p.gpm.path);
            let (gp, gm) = wk.rows[before..]
                .iter()
                .filter(|r| r.path.starts_with(&prefix))
                .fold((0, 0), |(a, b), r| (a + r.params, b + r.macs));
            let window = p.gpm.lsae.as_ref().map_or(0, |l| l.window.0);
            let head_dim = p.gpm.lsae.as_ref().map_or(c / 2, |l| l.head_dim());
            let gig_k = p.gpm.gig.as_ref().map_or(m.config.gig_kernel, |g| g.kernel);
            let (cp, cf) = gpm_closed_form(c as u64, gig_k as u64, sh as u64, sw as u64, window as u64, head_dim as u64);
            let (wp, wf) = wmhsa_closed_form(c as u64, (sh * sw) as u64, (window * window) as u64);
            stages.push(StageEstimate {
                stage: stage.index,
                channels: c,
                height: sh,
                width: sw,
                window,
                head_dim,
                gpm_closed_params: cp,
                gpm_closed_flops: cf,
                gpm_counted_params: gp,
                gpm_counted_macs: gm,
                wmhsa_params: wp,
                wmhsa_flops: wf,
            });
        }
    }

    let pooled = [x[0], x[1], 1, 1];
    wk.row("head/pool".into(), 0, 0, 0);
    trace.push(trace_row("head/pool", x, pooled, None));
    wk.linear(&m.head, x[0], x[1])?;
    trace.push(TraceRow {
        path: m.head.path.clone(),
        input: pooled.to_vec(),
        output: vec![x[0], m.head.out_features],
        note: None,
    });
    let trace = ShapeTrace { rows: trace };
    trace.check_chain()?;
    Ok(ComplexityReport { input_size, rows: wk.rows, stages, trace })
}

/// Learnable scalars, with or without the classifier head.
pub fn count_params<T: Scalar>(m: &HGpeModel<T>, include_head: bool) -> Result<u64> {
    let [h, w] = m.config.input_size;
    Ok(complexity(m, (h, w))?.params(include_head))
}

pub fn count_macs<T: Scalar>(m: &HGpeModel<T>, input_size: (usize, usize)) -> Result<ComplexityReport> {
    complexity(m, input_size)
}

pub fn shape_trace<T: Scalar>(m: &HGpeModel<T>, input_size: (usize, usize)) -> Result<ShapeTrace> {
    Ok(complexity(m, input_size)?.trace)
}

/// MACs of one convolution applied to an input of shape `x`.
pub fn conv_macs(l: &ConvLayer, x: [usize; 4]) -> Result<u64> {
    let mut wk = Walker { rows: Vec::new() };
    wk.conv(l, x)?;
    Ok(wk.rows[0].macs)
}

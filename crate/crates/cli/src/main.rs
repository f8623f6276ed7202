use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hgpe::analysis::{complexity, FlopConvention};
use hgpe::autodiff::{grad_check, gradcheck_suite, micro_model_case, train_toy_with, ToyConfig};
use hgpe::backbone::{build_model, model_forward, ModelConfig, Variant};
use hgpe::io::{load_config, load_ppm, load_weights, save_config, save_weights, to_input};
use hgpe::tensor::{softmax_lastdim, NormMode};
use hgpe::Tensor;

#[derive(Parser)]
#[command(name = "hgpe", version, about = "H-GPE vision backbone: complexity, gradient checks, toy training and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter and FLOP report, with published reference values for S/T/N.
    Summarize {
        #[command(flatten)]
        model: ModelArgs,
        /// Square input side; defaults to the config's input size.
        #[arg(long)]
        input_size: Option<usize>,
        /// Headline totals include the classifier head.
        #[arg(long)]
        include_head: bool,
        /// Print one `path params macs` line per layer instead of the table.
        #[arg(long)]
        records: bool,
    },
    /// Block-level shape listing from the stem to the logits.
    Trace {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input_size: Option<usize>,
    },
    /// Finite-difference check of every differentiable op, each block and a micro model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Doubles the backward of the named case (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Trains the micro config on the synthetic two-class task.
    TrainToy {
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes `step loss accuracy` per line.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 512)]
        samples: usize,
        /// Model config; defaults to the micro config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        save_weights: Option<PathBuf>,
        #[arg(long)]
        save_config: Option<PathBuf>,
    },
    /// Classifies a binary PPM image and prints the top-5 classes.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Times single-image inference.
    Bench {
        #[arg(long, default_value = "N")]
        variant: String,
        #[arg(long, default_value_t = 224)]
        input_size: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Preset: S, T or N.
    #[arg(long, conflicts_with = "config")]
    variant: Option<String>,
    /// TOML model config.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ModelArgs {
    fn resolve(&self, fallback: Variant) -> Result<ModelConfig> {
        match (&self.variant, &self.config) {
            (_, Some(path)) => load_config(path).with_context(|| format!("loading config {}", path.display())),
            (Some(name), None) => Ok(ModelConfig::preset(parse_variant(name)?)),
            (None, None) => Ok(ModelConfig::preset(fallback)),
        }
    }
}

fn parse_variant(name: &str) -> Result<Variant> {
    Variant::parse(name).with_context(|| format!("unknown variant {name:?}, expected S, T or N"))
}

fn square(size: Option<usize>, cfg: &ModelConfig) -> (usize, usize) {
    size.map_or((cfg.input_size[0], cfg.input_size[1]), |s| (s, s))
}

fn summarize(cfg: &ModelConfig, size: (usize, usize), include_head: bool, records: bool) -> Result<()> {
    let m = build_model::<f32>(cfg, 0)?;
    let r = complexity(&m, size)?;
    if records {
        print!("{}", r.render_records());
        return Ok(());
    }
    print!("{}", r.render_table());
    let params = r.params(include_head);
    let scope = if include_head { "with head" } else { "backbone" };
    println!("total ({scope}): params {params} = {:.3}M", params as f64 / 1e6);
    for c in [FlopConvention::Macs, FlopConvention::TwiceMacs] {
        println!("flops[{}] ({scope}): {:.3}G", c.name(), r.flops(c, include_head) as f64 / 1e9);
    }
    if let Some((p, g)) = cfg.variant.reference() {
        let c = r.closest_convention(g * 1e9, include_head);
        println!(
            "reference: {p} / {g}  (counted {:.2}M / {:.2}G under {}, closest convention)",
            params as f64 / 1e6,
            r.flops(c, include_head) as f64 / 1e9,
            c.name()
        );
    }
    Ok(())
}

fn gradcheck(seed: u64, tolerance: f64, eps: f64, fault: Option<&str>) -> Result<bool> {
    let mut cases = gradcheck_suite(seed, eps)?;
    cases.push(micro_model_case(seed, eps)?);
    if let Some(name) = fault {
        let i = cases.iter().position(|c| c.name == name).with_context(|| format!("no gradient case named {name:?}"))?;
        let case = cases.remove(i);
        cases.insert(i, case.with_broken_backward());
    }
    let width = cases.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut failing = Vec::new();
    for case in &cases {
        let r = grad_check(case, seed, eps, tolerance)?;
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<width$}  max_rel_error {:.3e}  {verdict}", r.name, r.max_rel_error());
        if !r.passed() {
            failing.push(r.name);
        }
    }
    println!("{} of {} cases passed at tolerance {tolerance:e}", cases.len() - failing.len(), cases.len());
    if !failing.is_empty() {
        eprintln!("failing: {}", failing.join(", "));
    }
    Ok(failing.is_empty())
}

fn infer(weights: &PathBuf, image: &PathBuf, cfg: &ModelConfig) -> Result<()> {
    let mut m = build_model::<f32>(cfg, 0)?;
    load_weights(weights, &mut m.store).with_context(|| format!("loading weights {}", weights.display()))?;
    let img = load_ppm(image).with_context(|| format!("reading {}", image.display()))?;
    let [h, w] = cfg.input_size;
    let x = to_input::<f32>(&img, h, w)?;
    let logits = model_forward(&m, &x, NormMode::Infer)?;
    if !logits.is_finite() {
        bail!("non-finite logits");
    }
    let probs = softmax_lastdim(&logits)?;
    let mut ranked: Vec<(usize, f32)> = probs.data().iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (class, p) in ranked.into_iter().take(5) {
        println!("{class} {p:.6} logit {:.6}", logits.data()[class]);
    }
    Ok(())
}

fn bench(variant: Variant, size: usize, repeats: usize) -> Result<()> {
    let mut cfg = ModelConfig::preset(variant);
    cfg.input_size = [size, size];
    let m = build_model::<f32>(&cfg, 0)?;
    let r = complexity(&m, (size, size))?;
    println!("variant {variant:?} at {size}x{size}: {} MACs, {} params", r.macs(true), r.params(true));
    let x = Tensor::<f32>::zeros(vec![1, 3, size, size])?;
    let mut times = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let start = Instant::now();
        model_forward(&m, &x, NormMode::Infer)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        println!("run {i}: {ms:.3} ms");
        times.push(ms);
    }
    let n = times.len().max(1) as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    println!("mean {mean:.3} ms, stddev {std:.3} ms over {repeats} runs");
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Summarize { model, input_size, include_head, records } => {
            let cfg = model.resolve(Variant::S)?;
            summarize(&cfg, square(input_size, &cfg), include_head, records)?;
        }
        Command::Trace { model, input_size } => {
            let cfg = model.resolve(Variant::S)?;
            let m = build_model::<f32>(&cfg, 0)?;
            print!("{}", complexity(&m, square(input_size, &cfg))?.trace.render());
        }
        Command::Gradcheck { seed, tolerance, eps, inject_fault } => {
            return gradcheck(seed, tolerance, eps, inject_fault.as_deref());
        }
        Command::TrainToy { steps, lr, seed, metrics, batch_size, samples, config, save_weights: weights, save_config: cfg_out } => {
            let model = match &config {
                Some(path) => load_config(path)?,
                None => ModelConfig::micro(),
            };
            let cfg = ToyConfig { model, steps, lr, seed, batch_size, samples, ..ToyConfig::default() };
            let mut log = metrics.as_ref().map(File::create).transpose()?.map(BufWriter::new);
            let mut io_err = Ok(());
            let (m, report) = train_toy_with::<f32>(&cfg, |s| {
                if let Some(w) = log.as_mut() {
                    if io_err.is_ok() {
                        io_err = writeln!(w, "{} {} {}", s.step, s.loss, s.accuracy);
                    }
                }
            })?;
            io_err?;
            if let Some(mut w) = log {
                w.flush()?;
            }
            println!("final accuracy {:.4}", report.final_accuracy);
            if let Some(path) = weights {
                save_weights(&path, &m.store)?;
            }
            if let Some(path) = cfg_out {
                save_config(&path, &cfg.model)?;
            }
        }
        Command::Infer { weights, image, model } => {
            let cfg = model.resolve(Variant::S)?;
            infer(&weights, &image, &cfg)?;
        }
        Command::Bench { variant, input_size, repeats } => bench(parse_variant(&variant)?, input_size, repeats)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

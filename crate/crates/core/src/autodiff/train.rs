use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::{build_model, model_forward, HGpeModel, ModelConfig};
use crate::error::{Error, Result};
use crate::params::seeded_rng;
use crate::scalar::Scalar;
use crate::tensor::{NormMode, Tensor};

use super::optim::{OptimState, OptimizerKind};
use super::session::Session;

/// Images `[N, 3, S, S]` normalized to roughly `[-1, 1]`, with class labels.
#[derive(Clone)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The samples at `indices`, stacked.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let dims = self.images.dims();
        let per = dims[1..].iter().product::<usize>();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = dims.to_vec();
        shape[0] = indices.len();
        Ok((Tensor::from_vec(shape, data)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Two-class toy images: label 0 is a bright disk on a dark field, label 1 a
/// bright axis-aligned square. Position, size, brightness and pixel noise vary.
pub fn synthetic_dataset<T: Scalar>(samples: usize, size: usize, seed: u64) -> Result<Dataset<T>> {
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let mut data = Vec::with_capacity(samples * 3 * size * size);
    let mut labels = Vec::with_capacity(samples);
    let s = size as f64;
    for i in 0..samples {
        let label = i % 2;
        let radius = rng.gen_range(0.15 * s..0.3 * s);
        let cy = rng.gen_range(radius..s - radius);
        let cx = rng.gen_range(radius..s - radius);
        let fg = rng.gen_range(0.7..1.0);
        let bg = rng.gen_range(0.0..0.25);
        let mut plane = vec![0.0f64; size * size];
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let inside = if label == 0 { dy * dy + dx * dx <= radius * radius } else { dy.abs().max(dx.abs()) <= radius };
                plane[y * size + x] = if inside { fg } else { bg };
            }
        }
        for _ in 0..3 {
            data.extend(plane.iter().map(|&v| {
                let v: f64 = (v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                T::of((v - 0.5) / 0.5)
            }));
        }
        labels.push(label);
    }
    Ok(Dataset { images: Tensor::from_vec(vec![samples, 3, size, size], data)?, labels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub samples: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            model: ModelConfig::micro(),
            steps: 300,
            batch_size: 32,
            samples: 512,
            optimizer: OptimizerKind::adamw(),
            lr: 1e-3,
            weight_decay: 0.0,
            label_smoothing: 0.0,
            seed: 0,
        }
    }
}

/// Loss and accuracy of one optimizer step, measured on its batch before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepMetrics>,
    /// Accuracy over the whole training set in inference mode after training.
    pub final_accuracy: f64,
}

impl TrainReport {
    /// Trailing means over `window` consecutive steps.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let losses: Vec<f64> = self.steps.iter().map(|m| m.loss).collect();
        losses.windows(window.max(1)).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
    }
}

fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let k = logits.dims()[1];
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == label
        })
        .count();
    correct as f64 / labels.len().max(1) as f64
}

/// Accuracy of `model` on `data` in inference mode, in chunks of `batch`.
pub fn evaluate<T: Scalar>(model: &HGpeModel<T>, data: &Dataset<T>, batch: usize) -> Result<f64> {
    let mut correct = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (x, labels) = data.batch(chunk)?;
        let logits = model_forward(model, &x, NormMode::Infer)?;
        correct += accuracy(&logits, &labels) * chunk.len() as f64;
    }
    Ok(correct / data.len().max(1) as f64)
}

/// Trains a fresh model on the synthetic task, calling `on_step` after each step.
pub fn train_toy_with<T: Scalar>(
    cfg: &ToyConfig,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<(HGpeModel<T>, TrainReport)> {
    let [h, w] = cfg.model.input_size;
    if h != w {
        return Err(Error::Config(format!("toy task needs square inputs, got {h}x{w}")));
    }
    let data = synthetic_dataset::<T>(cfg.samples, h, cfg.seed)?;
    let mut model = build_model::<T>(&cfg.model, cfg.seed)?;
    let mut opt = OptimState::new(cfg.optimizer, cfg.lr, cfg.weight_decay);
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut steps = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        if cursor + cfg.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + cfg.batch_size.min(order.len())];
        cursor += idx.len();
        let (x, labels) = data.batch(idx)?;

        let (metrics, grads, updates) = {
            let s = Session::new(&model.store, NormMode::Train);
            let input = s.input(x);
            let logits = model.forward(&s, &input)?;
            let loss = s.cross_entropy(&logits, &labels, cfg.label_smoothing)?;
            let value = loss.value().item().f64();
            if !value.is_finite() {
                return Err(Error::Diverged { step, loss: value });
            }
            let metrics = StepMetrics { step, loss: value, accuracy: accuracy(logits.value(), &labels) };
            let g = s.backward(&loss)?;
            let grads = s.param_grads(&g);
            (metrics, grads, s.into_bn_updates())
        };
        model.store.apply_bn_updates(&updates)?;
        opt.step(&mut model.store, &grads)?;
        on_step(&metrics);
        steps.push(metrics);
    }
    let final_accuracy = evaluate(&model, &data, cfg.batch_size.max(1))?;
    Ok((model, TrainReport { steps, final_accuracy }))
}

pub fn train_toy<T: Scalar>(cfg: &ToyConfig) -> Result<(HGpeModel<T>, TrainReport)> {
    train_toy_with(cfg, |_| {})
}

//! SGD and AdamW over a [`ParamStore`].

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    AdamW { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adamw() -> Self {
        OptimizerKind::AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer hyperparameters and per-parameter moment estimates.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        OptimState { kind, lr, weight_decay, step: 0, first: Vec::new(), second: Vec::new() }
    }

    fn slots(&mut self, id: ParamId, len: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
        let i = id.index();
        if self.first.len() <= i {
            self.first.resize(i + 1, None);
            self.second.resize(i + 1, None);
        }
        let m = self.first[i].get_or_insert_with(|| vec![0.0; len]);
        let v = self.second[i].get_or_insert_with(|| vec![0.0; len]);
        (m, v)
    }

    /// One update of every parameter in `grads`.
    ///
    /// SGD: `p -= lr * (g + wd * p)`. AdamW uses bias-corrected moments and
    /// decoupled decay: `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (lr, wd, kind) = (self.lr, self.weight_decay, self.kind);
        for (id, g) in grads {
            let p = store.get(*id);
            if p.shape() != g.shape() {
                return Err(Error::TensorMismatch {
                    name: store.name(*id).to_string(),
                    reason: format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
            }
            let pd = p.to_f64_vec();
            let gd = g.to_f64_vec();
            let updated: Vec<f64> = match kind {
                OptimizerKind::Sgd => pd.iter().zip(&gd).map(|(p, g)| p - lr * (g + wd * p)).collect(),
                OptimizerKind::AdamW { beta1, beta2, eps } => {
                    let (m, v) = self.slots(*id, pd.len());
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    pd.iter()
                        .zip(&gd)
                        .enumerate()
                        .map(|(i, (p, g))| {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                            let mh = m[i] / c1;
                            let vh = v[i] / c2;
                            p - lr * (mh / (vh.sqrt() + eps) + wd * p)
                        })
                        .collect()
                }
            };
            let value = Tensor::from_f64(p.dims().to_vec(), &updated)?;
            store.set(*id, value)?;
        }
        Ok(())
    }
}

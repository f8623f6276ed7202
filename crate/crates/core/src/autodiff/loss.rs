use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use super::tape::{GradTape, Var};

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

impl<T: Scalar> GradTape<T> {
    /// Mean label-smoothed cross-entropy of `logits: [N, K]`.
    ///
    /// The target puts `1 - smoothing + smoothing / K` on the label and
    /// `smoothing / K` elsewhere; `smoothing = 0` is plain cross-entropy.
    pub fn cross_entropy(&self, logits: &Var<T>, labels: &[usize], smoothing: f64) -> Result<Var<T>> {
        logits.value().expect_rank(2)?;
        let (n, k) = (logits.dims()[0], logits.dims()[1]);
        if labels.len() != n {
            return Err(Error::AxisMismatch { axis: "batch (labels)", expected: n, actual: labels.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label, classes: k });
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::invalid(format!("label smoothing {smoothing} outside [0, 1]")));
        }
        let data = logits.value().to_f64_vec();
        let off = smoothing / k as f64;
        let on = 1.0 - smoothing + off;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(n * k);
        for (row, &label) in data.chunks_exact(k).zip(labels) {
            let logp = log_softmax_row(row);
            for (j, lp) in logp.iter().enumerate() {
                let target = if j == label { on } else { off };
                loss -= target * lp;
                grad.push((lp.exp() - target) / n as f64);
            }
        }
        let value = Tensor::scalar(T::of(loss / n as f64));
        let grad = Tensor::<T>::from_f64_parts(Shape::new(vec![n, k])?, grad);
        Ok(self.custom(&[logits], value, Box::new(move |g| Ok(vec![Some(grad.scale(g.item()))]))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let tape = GradTape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(vec![3, 4]).unwrap());
        let loss = tape.cross_entropy(&z, &[0, 1, 3], 0.0).unwrap();
        assert!((loss.value().item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let tape = GradTape::<f64>::new();
        let z = tape.leaf(Tensor::from_f64(vec![1, 3], &[0.0, 200.0, 0.0]).unwrap());
        let loss = tape.cross_entropy(&z, &[1], 0.0).unwrap();
        assert!(loss.value().item() < 1e-80);
    }

    #[test]
    fn smoothed_loss_matches_formula() {
        let logits = [0.3, -1.2, 2.2, 0.0, 1.0, -0.5, 0.7, 0.1];
        let labels = [2usize, 0];
        let tape = GradTape::<f64>::new();
        let z = tape.leaf(Tensor::from_f64(vec![2, 4], &logits).unwrap());
        let loss = tape.cross_entropy(&z, &labels, 0.1).unwrap().value().item();
        // direct: -(1-eps) log p_y - eps/K sum_k log p_k
        let mut expect = 0.0;
        for (row, &y) in logits.chunks(4).zip(&labels) {
            let z: f64 = row.iter().map(|v: &f64| v.exp()).sum();
            let logp: Vec<f64> = row.iter().map(|v| v - z.ln()).collect();
            expect += -(0.9) * logp[y] - 0.1 / 4.0 * logp.iter().sum::<f64>();
        }
        expect /= 2.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let tape = GradTape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(vec![1, 2]).unwrap());
        assert!(matches!(tape.cross_entropy(&z, &[2], 0.0), Err(Error::Label { label: 2, classes: 2 })));
    }
}

use crate::error::Result;
use crate::scalar::Scalar;

use super::{debug_check_finite, Tensor};

/// Softmax over the last dimension, max-shifted.
pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let len = *x.dims().last().expect("rank >= 1");
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(len) {
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    let y = Tensor::from_f64_parts(x.shape().clone(), out);
    debug_check_finite("softmax", &[x], &y);
    Ok(y)
}

/// `dx = y * (dy - sum(dy * y))` row by row, from the softmax output `y`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.expect_same_shape(grad)?;
    let len = *y.dims().last().expect("rank >= 1");
    let mut out = Vec::with_capacity(y.numel());
    for (yr, gr) in y.data().chunks_exact(len).zip(grad.data().chunks_exact(len)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.f64() * b.f64()).sum();
        out.extend(yr.iter().zip(gr).map(|(a, b)| a.f64() * (b.f64() - dot)));
    }
    Ok(Tensor::from_f64_parts(y.shape().clone(), out))
}

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Shape, Tensor};

fn batch_dims<T: Scalar>(t: &Tensor<T>) -> Result<(&[usize], usize, usize)> {
    if t.rank() < 2 {
        return Err(Error::Rank { expected: 2, shape: t.dims().to_vec() });
    }
    let r = t.rank();
    Ok((&t.dims()[..r - 2], t.dims()[r - 2], t.dims()[r - 1]))
}

/// `[..., m, k] x [..., k, n] -> [..., m, n]` with equal leading dims.
pub fn matmul_batched<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (lead_a, m, k) = batch_dims(a)?;
    let (lead_b, kb, n) = batch_dims(b)?;
    if k != kb {
        return Err(Error::AxisMismatch { axis: "inner matmul dimension", expected: k, actual: kb });
    }
    if lead_a != lead_b {
        return Err(Error::InvalidShape {
            shape: b.dims().to_vec(),
            reason: format!("batch dims differ from {:?}", a.shape()),
        });
    }
    let batch: usize = lead_a.iter().product();
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0f64; batch * m * n];
    for bi in 0..batch {
        let am = &ad[bi * m * k..][..m * k];
        let bm = &bd[bi * k * n..][..k * n];
        let om = &mut out[bi * m * n..][..m * n];
        for i in 0..m {
            let orow = &mut om[i * n..][..n];
            for p in 0..k {
                let av = am[i * k + p].f64();
                for (o, bv) in orow.iter_mut().zip(&bm[p * n..][..n]) {
                    *o += av * bv.f64();
                }
            }
        }
    }
    let mut dims = lead_a.to_vec();
    dims.extend([m, n]);
    Ok(Tensor::from_f64_parts(Shape(dims), out))
}

/// Swaps the last two dimensions.
pub fn transpose_last2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (lead, m, n) = batch_dims(x)?;
    let batch: usize = lead.iter().product();
    let d = x.data();
    let mut out = Vec::with_capacity(x.numel());
    for bi in 0..batch {
        let src = &d[bi * m * n..][..m * n];
        for j in 0..n {
            for i in 0..m {
                out.push(src[i * n + j]);
            }
        }
    }
    let mut dims = lead.to_vec();
    dims.extend([n, m]);
    Ok(Tensor::from_parts(Shape(dims), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn against_triple_loop() {
        let a = Tensor::<f64>::from_f64(vec![1, 2, 3], &[1.5, -2.0, 0.25, 3.0, 0.5, -1.0]).unwrap();
        let b = Tensor::<f64>::from_f64(vec![1, 3, 2], &[0.3, 1.0, -0.7, 2.0, 4.0, -0.1]).unwrap();
        let c = matmul_batched(&a, &b).unwrap();
        assert_eq!(c.dims(), &[1, 2, 2]);
        for i in 0..2 {
            for j in 0..2 {
                let mut e = 0.0;
                for p in 0..3 {
                    e += a.at(&[0, i, p]) * b.at(&[0, p, j]);
                }
                assert!((c.at(&[0, i, j]) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_and_zero() {
        let x = Tensor::<f64>::from_f64(vec![2, 2, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let eye = Tensor::<f64>::from_f64(vec![2, 2, 2], &[1., 0., 0., 1., 1., 0., 0., 1.]).unwrap();
        assert_eq!(matmul_batched(&eye, &x).unwrap(), x);
        let zero = Tensor::<f64>::zeros(vec![2, 4, 2]).unwrap();
        assert!(matmul_batched(&zero, &x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matmul_batched(&x, &x).is_err());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let x = Tensor::<f64>::from_f64(vec![2, 2, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let t = transpose_last2(&x).unwrap();
        assert_eq!(t.at(&[1, 2, 0]), 9.0);
        assert_eq!(transpose_last2(&t).unwrap(), x);
    }
}

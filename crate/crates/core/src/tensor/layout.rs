use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Shape, Tensor};

fn outer_inner(dims: &[usize], axis: usize) -> (usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, inner)
}

/// Splits `x` into contiguous ranges of `sizes` along `axis`.
pub fn split_axis<T: Scalar>(x: &Tensor<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if axis >= x.rank() {
        return Err(Error::invalid(format!("split axis {axis} out of range for rank {}", x.rank())));
    }
    let len = x.dims()[axis];
    let total: usize = sizes.iter().sum();
    if total != len || sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid(format!(
            "split sizes {sizes:?} must be positive and sum to axis {axis} length {len}"
        )));
    }
    let (outer, inner) = outer_inner(x.dims(), axis);
    let data = x.data();
    let mut start = 0;
    let mut parts = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut out = Vec::with_capacity(outer * size * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            out.extend_from_slice(&data[base..base + size * inner]);
        }
        let mut dims = x.dims().to_vec();
        dims[axis] = size;
        parts.push(Tensor::from_parts(Shape(dims), out));
        start += size;
    }
    Ok(parts)
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat_axis<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    if axis >= first.rank() {
        return Err(Error::invalid(format!("concat axis {axis} out of range for rank {}", first.rank())));
    }
    let mut len = 0;
    for p in parts {
        if p.rank() != first.rank()
            || p.dims().iter().zip(first.dims()).enumerate().any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::InvalidShape {
                shape: p.dims().to_vec(),
                reason: format!("cannot concat with {:?} along axis {axis}", first.shape()),
            });
        }
        len += p.dims()[axis];
    }
    let (outer, inner) = outer_inner(first.dims(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.dims()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = len;
    Ok(Tensor::from_parts(Shape(dims), out))
}

pub fn split_channels<T: Scalar>(x: &Tensor<T>, parts: &[usize]) -> Result<Vec<Tensor<T>>> {
    x.expect_rank(4)?;
    split_axis(x, 1, parts)
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    for p in parts {
        p.expect_rank(4)?;
    }
    concat_axis(parts, 1)
}

fn broadcast_compatible(x: &[usize], g: &[usize]) -> bool {
    x.len() == g.len() && x.iter().zip(g).all(|(&a, &b)| b == a || b == 1)
}

/// Flat index into a broadcast operand for every element of the full shape.
fn broadcast_indices(full: &[usize], small: &[usize]) -> Vec<usize> {
    let rank = full.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        strides[i] = if small[i] == 1 { 0 } else { acc };
        acc *= small[i];
    }
    let numel: usize = full.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..numel {
        out.push(flat);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            flat += strides[ax];
            if idx[ax] < full[ax] {
                break;
            }
            flat -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// `x * g` where every dimension of `g` either equals that of `x` or is 1.
pub fn mul_broadcast<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    if !broadcast_compatible(x.dims(), g.dims()) {
        return Err(Error::InvalidShape {
            shape: g.dims().to_vec(),
            reason: format!("does not broadcast against {:?}", x.shape()),
        });
    }
    let idx = broadcast_indices(x.dims(), g.dims());
    let gd = g.data();
    let data = x.data().iter().zip(&idx).map(|(&a, &i)| a * gd[i]).collect();
    Ok(Tensor::from_parts(x.shape().clone(), data))
}

/// Sums `t` down to `target` dims, the adjoint of broadcasting.
pub fn reduce_to_shape<T: Scalar>(t: &Tensor<T>, target: &[usize]) -> Result<Tensor<T>> {
    if !broadcast_compatible(t.dims(), target) {
        return Err(Error::InvalidShape {
            shape: target.to_vec(),
            reason: format!("is not a broadcast source of {:?}", t.shape()),
        });
    }
    let idx = broadcast_indices(t.dims(), target);
    let mut acc = vec![0.0f64; target.iter().product()];
    for (&v, &i) in t.data().iter().zip(&idx) {
        acc[i] += v.f64();
    }
    Ok(Tensor::from_f64_parts(Shape(target.to_vec()), acc))
}

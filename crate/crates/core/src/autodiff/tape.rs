use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    self, concat_axis, conv2d, conv2d_backward, matmul_batched, mul_broadcast, normalize,
    normalize_backward, reduce_to_shape, softmax_backward, softmax_lastdim, split_axis, strip_pool,
    strip_pool_backward, transpose_last2, window_merge, window_partition, Activation, Conv2dSpec,
    NormKind, NormMode, NormSaved, PadRecord, Shape, StripAxis, Tensor,
};

/// A value produced under a [`GradTape`]. Untracked vars are constants.
#[derive(Clone)]
pub struct Var<T> {
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn shape(&self) -> &Shape {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Rc::try_unwrap(self.value).unwrap_or_else(|rc| (*rc).clone())
    }
}

/// Maps the output gradient to one optional gradient per op input.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

/// Arithmetic executed through a tape, for cross-checking complexity counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpStats {
    /// Multiply-accumulates in convolutions, matmuls and linear layers.
    pub macs: u64,
    /// Elements passed through normalizations, activations and softmax.
    pub elementwise: u64,
}

/// Reverse-mode record of tensor operations.
///
/// Nodes are appended in execution order, which is a topological order, so
/// [`GradTape::backward`] walks them in reverse and visits each once.
pub struct GradTape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    stats: Cell<OpStats>,
    kink_log: RefCell<Option<KinkLog>>,
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward pass, indexed by tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.id.and_then(|i| self.grads.get(i)).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::from_parts(var.shape().clone(), vec![T::zero(); var.value().numel()]))
    }
}

/// Which piece of each piecewise activation every input element fell in,
/// and the closest any element came to a kink.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KinkLog {
    pub regions: Vec<u8>,
    pub min_distance: f64,
}

fn kink_region(x: f64, kinks: &[f64]) -> u8 {
    let mut r = 0;
    for &k in kinks {
        if x > k {
            r += 2;
        } else if x == k {
            r += 1;
        }
    }
    r
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        GradTape { nodes: RefCell::new(Vec::new()), stats: Cell::new(OpStats::default()), kink_log: RefCell::new(None) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> OpStats {
        self.stats.get()
    }

    fn add_stats(&self, macs: u64, elementwise: u64) {
        let mut s = self.stats.get();
        s.macs += macs;
        s.elementwise += elementwise;
        self.stats.set(s);
    }

    /// Starts recording which piece of each piecewise activation every input
    /// element falls in.
    pub fn start_kink_log(&self) {
        *self.kink_log.borrow_mut() = Some(KinkLog { regions: Vec::new(), min_distance: f64::INFINITY });
    }

    pub fn take_kink_log(&self) -> KinkLog {
        self.kink_log.borrow_mut().take().unwrap_or_default()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: Vec::new(), backward: None });
        Var { id: Some(nodes.len() - 1), value: Rc::new(value) }
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var { id: None, value: Rc::new(value) }
    }

    /// Records an op with a caller-supplied backward rule.
    pub fn custom(&self, inputs: &[&Var<T>], value: Tensor<T>, backward: BackwardFn<T>) -> Var<T> {
        if inputs.iter().all(|v| v.id.is_none()) {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: inputs.iter().map(|v| v.id).collect(), backward: Some(backward) });
        Var { id: Some(nodes.len() - 1), value: Rc::new(value) }
    }

    /// Gradients of the single-element `loss` with respect to every tracked var.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value().numel() != 1 {
            return Err(Error::NonScalarLoss(loss.dims().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        let Some(root) = loss.id else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::from_parts(loss.shape().clone(), vec![T::one()]));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&g)?;
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    if let (Some(p), Some(pg)) = (parent, pg) {
                        grads[*p] = Some(match grads[*p].take() {
                            Some(acc) => acc.add(&pg)?,
                            None => pg,
                        });
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    pub fn conv2d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, spec: Conv2dSpec) -> Result<Var<T>> {
        let y = conv2d(x.value(), w.value(), b.map(|b| b.value()), spec)?;
        let (_, cin_g, kh, kw) = w.value().nchw()?;
        self.add_stats((y.numel() * cin_g * kh * kw) as u64, 0);
        let (xv, wv) = (x.value.clone(), w.value.clone());
        let has_bias = b.is_some();
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.custom(
            &inputs,
            y,
            Box::new(move |g| {
                let gr = conv2d_backward(&xv, &wv, has_bias, spec, g)?;
                let mut out = vec![Some(gr.input), Some(gr.weight)];
                if has_bias {
                    out.push(gr.bias);
                }
                Ok(out)
            }),
        ))
    }

    /// Normalization with per-channel affine; returns the statistics used.
    #[allow(clippy::too_many_arguments)]
    pub fn normalize(
        &self,
        x: &Var<T>,
        scale: &Var<T>,
        shift: &Var<T>,
        kind: NormKind,
        running: Option<(&Tensor<T>, &Tensor<T>)>,
        mode: NormMode,
        eps: f64,
    ) -> Result<(Var<T>, NormSaved)> {
        let (y, saved) = normalize(x.value(), kind, scale.value(), shift.value(), running, mode, eps)?;
        self.add_stats(0, y.numel() as u64);
        let (xv, sv) = (x.value.clone(), scale.value.clone());
        let saved_bw = saved.clone();
        let var = self.custom(
            &[x, scale, shift],
            y,
            Box::new(move |g| {
                let gr = normalize_backward(&xv, kind, &sv, &saved_bw, g)?;
                Ok(vec![Some(gr.input), Some(gr.scale), Some(gr.shift)])
            }),
        );
        Ok((var, saved))
    }

    pub fn activation(&self, x: &Var<T>, act: Activation) -> Var<T> {
        if let Some(log) = self.kink_log.borrow_mut().as_mut() {
            if !act.kinks().is_empty() {
                for v in x.value().data() {
                    let v = v.f64();
                    log.regions.push(kink_region(v, act.kinks()));
                    let d = act.kinks().iter().map(|k| (v - k).abs()).fold(f64::INFINITY, f64::min);
                    log.min_distance = log.min_distance.min(d);
                }
            }
        }
        let y = act.apply(x.value());
        self.add_stats(0, y.numel() as u64);
        let xv = x.value.clone();
        self.custom(
            &[x],
            y,
            Box::new(move |g| {
                let d = xv.zip_map(g, |xi, gi| T::of(act.derivative(xi.f64()) * gi.f64()))?;
                Ok(vec![Some(d)])
            }),
        )
    }

    pub fn strip_pool(&self, x: &Var<T>, axis: StripAxis) -> Result<Var<T>> {
        let y = strip_pool(x.value(), axis)?;
        let shape = x.shape().clone();
        Ok(self.custom(&[x], y, Box::new(move |g| Ok(vec![Some(strip_pool_backward(g, &shape)?)]))))
    }

    pub fn global_avg_pool(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = tensor::pool_global_avg(x.value())?;
        let shape = x.shape().clone();
        Ok(self.custom(&[x], y, Box::new(move |g| Ok(vec![Some(strip_pool_backward(g, &shape)?)]))))
    }

    pub fn softmax(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = softmax_lastdim(x.value())?;
        self.add_stats(0, y.numel() as u64);
        let yv = Rc::new(y.clone());
        Ok(self.custom(&[x], y, Box::new(move |g| Ok(vec![Some(softmax_backward(&yv, g)?)]))))
    }

    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = matmul_batched(a.value(), b.value())?;
        let k = *a.dims().last().expect("rank >= 2");
        self.add_stats((y.numel() * k) as u64, 0);
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.custom(
            &[a, b],
            y,
            Box::new(move |g| {
                let ga = matmul_batched(g, &transpose_last2(&bv)?)?;
                let gb = matmul_batched(&transpose_last2(&av)?, g)?;
                Ok(vec![Some(ga), Some(gb)])
            }),
        ))
    }

    pub fn transpose_last2(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = transpose_last2(x.value())?;
        Ok(self.custom(&[x], y, Box::new(|g| Ok(vec![Some(transpose_last2(g)?)]))))
    }

    pub fn reshape(&self, x: &Var<T>, dims: &[usize]) -> Result<Var<T>> {
        let y = x.value().reshape(dims.to_vec())?;
        let orig = x.dims().to_vec();
        Ok(self.custom(&[x], y, Box::new(move |g| Ok(vec![Some(g.reshape(orig.clone())?)]))))
    }

    pub fn concat(&self, parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let y = concat_axis(&values, axis)?;
        let sizes: Vec<usize> = parts.iter().map(|p| p.dims()[axis]).collect();
        Ok(self.custom(
            parts,
            y,
            Box::new(move |g| Ok(split_axis(g, axis, &sizes)?.into_iter().map(Some).collect())),
        ))
    }

    pub fn split(&self, x: &Var<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Var<T>>> {
        let pieces = split_axis(x.value(), axis, sizes)?;
        let full = x.dims().to_vec();
        let mut start = 0;
        let mut out = Vec::with_capacity(pieces.len());
        for piece in pieces {
            let len = piece.dims()[axis];
            let (before, after) = (start, full[axis] - start - len);
            let full = full.clone();
            out.push(self.custom(
                &[x],
                piece,
                Box::new(move |g| {
                    let zeros = |n: usize| {
                        let mut d = full.clone();
                        d[axis] = n;
                        Tensor::<T>::zeros(d)
                    };
                    let mut parts = Vec::new();
                    let (zb, za);
                    if before > 0 {
                        zb = zeros(before)?;
                        parts.push(&zb);
                    }
                    parts.push(g);
                    if after > 0 {
                        za = zeros(after)?;
                        parts.push(&za);
                    }
                    Ok(vec![Some(concat_axis(&parts, axis)?)])
                }),
            ));
            start += len;
        }
        Ok(out)
    }

    /// `x * gate`, broadcasting size-1 dims of `gate`.
    pub fn mul_broadcast(&self, x: &Var<T>, gate: &Var<T>) -> Result<Var<T>> {
        let y = mul_broadcast(x.value(), gate.value())?;
        let (xv, gv) = (x.value.clone(), gate.value.clone());
        Ok(self.custom(
            &[x, gate],
            y,
            Box::new(move |g| {
                let gx = mul_broadcast(g, &gv)?;
                let gg = reduce_to_shape(&g.mul(&xv)?, gv.dims())?;
                Ok(vec![Some(gx), Some(gg)])
            }),
        ))
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = a.value().add(b.value())?;
        Ok(self.custom(&[a, b], y, Box::new(|g| Ok(vec![Some(g.clone()), Some(g.clone())]))))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let y = a.value().mul(b.value())?;
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.custom(&[a, b], y, Box::new(move |g| Ok(vec![Some(g.mul(&bv)?), Some(g.mul(&av)?)]))))
    }

    pub fn scale(&self, x: &Var<T>, factor: f64) -> Var<T> {
        let y = x.value().scale(T::of(factor));
        self.custom(&[x], y, Box::new(move |g| Ok(vec![Some(g.scale(T::of(factor)))])))
    }

    pub fn sum(&self, x: &Var<T>) -> Var<T> {
        let y = Tensor::scalar(T::of(x.value().sum()));
        let shape = x.shape().clone();
        self.custom(
            &[x],
            y,
            Box::new(move |g| Ok(vec![Some(Tensor::from_parts(shape.clone(), vec![g.item(); shape.numel()]))])),
        )
    }

    pub fn window_partition(&self, x: &Var<T>, wh: usize, ww: usize) -> Result<(Var<T>, PadRecord)> {
        let (y, pad) = window_partition(x.value(), wh, ww)?;
        Ok((self.custom(&[x], y, Box::new(move |g| Ok(vec![Some(window_merge(g, &pad)?)]))), pad))
    }

    pub fn window_merge(&self, windows: &Var<T>, pad: &PadRecord) -> Result<Var<T>> {
        let y = window_merge(windows.value(), pad)?;
        let pad = *pad;
        Ok(self.custom(
            &[windows],
            y,
            Box::new(move |g| Ok(vec![Some(window_partition(g, pad.window_h, pad.window_w)?.0)])),
        ))
    }

    /// `x w^T + b` for `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        x.value().expect_rank(2)?;
        w.value().expect_rank(2)?;
        let wt = transpose_last2(w.value())?;
        let mut y = matmul_batched(x.value(), &wt)?;
        self.add_stats((y.numel() * x.dims()[1]) as u64, 0);
        if let Some(b) = b {
            let out = w.dims()[0];
            if b.dims() != [out] {
                return Err(Error::AxisMismatch { axis: "linear bias length", expected: out, actual: b.value().numel() });
            }
            let bd = b.value().data();
            y = Tensor::from_parts(
                y.shape().clone(),
                y.data().iter().enumerate().map(|(i, &v)| v + bd[i % out]).collect(),
            );
        }
        let (xv, wv) = (x.value.clone(), w.value.clone());
        let has_bias = b.is_some();
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.custom(
            &inputs,
            y,
            Box::new(move |g| {
                let gx = matmul_batched(g, &wv)?;
                let gw = matmul_batched(&transpose_last2(g)?, &xv)?;
                let mut out = vec![Some(gx), Some(gw)];
                if has_bias {
                    let out_dim = g.dims()[1];
                    out.push(Some(reduce_to_shape(g, &[1, out_dim])?.reshape(vec![out_dim])?));
                }
                Ok(out)
            }),
        ))
    }
}

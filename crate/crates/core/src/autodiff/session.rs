use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Deref;

use crate::error::Result;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{NormMode, Tensor};

use super::tape::{GradTape, Gradients, Var};

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance.
    pub batch_var: Vec<f64>,
    pub momentum: f64,
}

/// One forward pass over a [`ParamStore`]: the tape, the mode, and the
/// parameter leaves it has handed out.
///
/// The store is only read. Batch-norm statistics observed in training mode
/// are queued and applied with [`ParamStore::apply_bn_updates`] afterwards.
pub struct Session<'s, T: Scalar> {
    tape: GradTape<T>,
    store: &'s ParamStore<T>,
    mode: NormMode,
    track_params: bool,
    params: RefCell<HashMap<ParamId, Var<T>>>,
    bn_updates: RefCell<Vec<BnUpdate>>,
}

impl<'s, T: Scalar> Session<'s, T> {
    /// Training sessions track parameter gradients; inference sessions record
    /// nothing unless an input is tracked.
    pub fn new(store: &'s ParamStore<T>, mode: NormMode) -> Self {
        Self::with_tracking(store, mode, mode == NormMode::Train)
    }

    pub fn with_tracking(store: &'s ParamStore<T>, mode: NormMode, track_params: bool) -> Self {
        Session {
            tape: GradTape::new(),
            store,
            mode,
            track_params,
            params: RefCell::new(HashMap::new()),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn tape(&self) -> &GradTape<T> {
        &self.tape
    }

    /// The var for a stored tensor; one leaf per parameter per session.
    pub fn param(&self, id: ParamId) -> Var<T> {
        if let Some(v) = self.params.borrow().get(&id) {
            return v.clone();
        }
        let value = self.store.get(id).clone();
        let learnable = self.store.entry(id).kind == ParamKind::Learnable;
        let var = if self.track_params && learnable { self.tape.leaf(value) } else { self.tape.constant(value) };
        self.params.borrow_mut().insert(id, var.clone());
        var
    }

    pub fn input(&self, x: Tensor<T>) -> Var<T> {
        self.tape.constant(x)
    }

    pub fn tracked_input(&self, x: Tensor<T>) -> Var<T> {
        self.tape.leaf(x)
    }

    pub(crate) fn push_bn_update(&self, update: BnUpdate) {
        self.bn_updates.borrow_mut().push(update);
    }

    /// Gradient for every learnable parameter, in store order. Parameters the
    /// loss does not reach get zeros.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        let params = self.params.borrow();
        self.store
            .learnable()
            .map(|(id, e)| {
                let g = match params.get(&id) {
                    Some(v) => grads.get_or_zeros(v),
                    None => Tensor::zeros(e.value.dims().to_vec()).expect("valid shape"),
                };
                (id, g)
            })
            .collect()
    }

    pub fn into_bn_updates(self) -> Vec<BnUpdate> {
        self.bn_updates.into_inner()
    }
}

impl<T: Scalar> Deref for Session<'_, T> {
    type Target = GradTape<T>;

    fn deref(&self) -> &GradTape<T> {
        &self.tape
    }
}

impl<T: Scalar> ParamStore<T> {
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        for u in updates {
            for (id, batch) in [(u.running_mean, &u.batch_mean), (u.running_var, &u.batch_var)] {
                let cur = self.get(id).to_f64_vec();
                let next: Vec<f64> =
                    cur.iter().zip(batch).map(|(r, b)| (1.0 - u.momentum) * r + u.momentum * b).collect();
                let t = Tensor::from_f64(self.get(id).dims().to_vec(), &next)?;
                self.set(id, t)?;
            }
        }
        Ok(())
    }
}

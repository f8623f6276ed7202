//! The network's blocks and the layers they are made of.
//!
//! Each block owns [`ParamId`](crate::params::ParamId) handles into a
//! [`ParamStore`] and runs inside a [`Session`]. The free `*_forward`
//! functions run a block once on a plain tensor.

mod asa;
mod cra;
mod gig;
mod gpe;
mod gpm;
mod irb;
pub mod layers;
mod lsae;

use crate::autodiff::{Session, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{NormMode, Tensor};

pub use asa::{asa_groups, AsaParams, ASA_KERNEL};
pub use cra::{cra_kernel_size, CraParams};
pub use gig::{GigParams, GIG_DEFAULT_KERNEL, GIG_DEFAULT_RATIO, GIG_GATE_KERNEL};
pub use gpe::GpeBlockParams;
pub use gpm::{AblationFlags, GpmConfig, GpmParams};
pub use irb::IrbParams;
pub use layers::{ConvLayer, Linear, NormLayer, BN_MOMENTUM, NORM_EPS};
pub use lsae::LsaeParams;

/// Runs `f` once on `x` in a fresh session and returns the output.
///
/// Training-mode batch-norm statistics are discarded.
pub fn run_once<T: Scalar>(
    store: &ParamStore<T>,
    mode: NormMode,
    x: &Tensor<T>,
    f: impl FnOnce(&Session<'_, T>, &Var<T>) -> Result<Var<T>>,
) -> Result<Tensor<T>> {
    let s = Session::with_tracking(store, mode, false);
    let input = s.input(x.clone());
    Ok(f(&s, &input)?.into_tensor())
}

pub fn gig_forward<T: Scalar>(x: &Tensor<T>, p: &GigParams, store: &ParamStore<T>, mode: NormMode) -> Result<Tensor<T>> {
    run_once(store, mode, x, |s, x| p.forward(s, x))
}

pub fn lsae_forward<T: Scalar>(x: &Tensor<T>, p: &LsaeParams, store: &ParamStore<T>, mode: NormMode) -> Result<Tensor<T>> {
    run_once(store, mode, x, |s, x| p.forward(s, x))
}

pub fn asa_forward<T: Scalar>(x: &Tensor<T>, p: &AsaParams, store: &ParamStore<T>, mode: NormMode) -> Result<Tensor<T>> {
    run_once(store, mode, x, |s, x| p.forward(s, x))
}

pub fn cra_forward<T: Scalar>(x: &Tensor<T>, p: &CraParams, store: &ParamStore<T>, mode: NormMode) -> Result<Tensor<T>> {
    run_once(store, mode, x, |s, x| p.forward(s, x))
}

pub fn irb_forward<T: Scalar>(x: &Tensor<T>, p: &IrbParams, store: &ParamStore<T>, mode: NormMode) -> Result<Tensor<T>> {
    run_once(store, mode, x, |s, x| p.forward(s, x))
}

pub fn gpm_forward<T: Scalar>(x: &Tensor<T>, p: &GpmParams, store: &ParamStore<T>, mode: NormMode) -> Result<Tensor<T>> {
    run_once(store, mode, x, |s, x| p.forward(s, x))
}

pub fn gpe_block_forward<T: Scalar>(x: &Tensor<T>, p: &GpeBlockParams, store: &ParamStore<T>, mode: NormMode) -> Result<Tensor<T>> {
    run_once(store, mode, x, |s, x| p.forward(s, x))
}

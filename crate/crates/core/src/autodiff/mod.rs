//! Reverse-mode differentiation, losses, optimizers, finite-difference
//! checking and a small end-to-end training harness.

mod gradcheck;
mod loss;
mod optim;
mod session;
mod suite;
mod tape;
mod train;

pub use gradcheck::{grad_check, CheckCase, GradCheckReport, InputReport};
pub use optim::{OptimState, OptimizerKind};
pub use session::{BnUpdate, Session};
pub use suite::{gradcheck_suite, micro_model_case, MODEL_SAMPLES_PER_TENSOR};
pub use tape::{BackwardFn, GradTape, Gradients, KinkLog, OpStats, Var};
pub use train::{evaluate, synthetic_dataset, train_toy, train_toy_with, Dataset, StepMetrics, ToyConfig, TrainReport};

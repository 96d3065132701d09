//! Normalizing flows trained on noise-perturbed manifold data, with the
//! noise level supplied to the flow as a condition.
//!
//! The crate is organized bottom-up:
//!
//! - [`Tensor`], [`Tape`], [`ParamStore`], [`adam_step`] and [`grad_check`]
//!   form the numeric core.
//! - [`flows`] holds invertible layers and their stacks.
//! - [`cnf`] is a 2-D continuous flow with exact trace.
//! - [`softflow`] perturbs 2-D toy data and trains either backend.
//! - [`pointflow`] is the two-level point-set model.
//! - [`metrics`] compares point sets.
//! - [`io`] and [`run`] handle files and the command-line workflows.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod cnf;
pub mod error;
pub mod flows;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pointflow;
pub mod rng;
pub mod run;
pub mod softflow;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use optim::{adam_step, AdamState, StepDecay};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

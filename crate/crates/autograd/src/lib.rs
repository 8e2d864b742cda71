//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records ops eagerly as they run; [`Tape::backward`] sweeps the
//! recorded nodes once in reverse. Only the primitives needed by the CAFNet
//! and MFAAN models exist, and every one of them is covered by a central
//! finite-difference check (see [`gradcheck`]).
//!
//! The tape is generic over [`Real`]: training runs in `f32`, gradient checks
//! in `f64`.

mod error;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod params;
mod real;
mod tape;

pub use error::{AutogradError, Result};
pub use gradcheck::{grad_check, grad_check_coords, rel_err, GradCheckReport};
pub use ops::norm::RunningStats;
pub use params::{write_atomic, EntryKind, ParamId, ParamStore};
pub use real::{gemm, MatMut, MatRef, Real};
pub use tape::{Tape, Tensor, Var};

/// Training or evaluation behaviour for dropout and batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

//! Differentiable primitives. Each op is an inherent method on [`crate::Tape`].

pub mod activation;
pub mod attention;
pub mod basic;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod norm;
pub mod pool;

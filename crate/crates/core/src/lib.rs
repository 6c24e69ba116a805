//! Mini-batch proximal Gaussian-process collocation for nonlinear PDEs.
#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod batching;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod problems;
pub mod reference;
pub mod solver;

pub use error::{Error, Result};

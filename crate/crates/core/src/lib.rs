//! Simulation kernel for two-sided (vertical) federated learning.
//!
//! Every party's model, the split-training protocol, party-wise dropout of
//! passive representations, the mutual-information label protection
//! (`dimip`), model-completion attacks and the baseline gradient defenses
//! live here. The crate is `no_std` and only needs `alloc`; file formats,
//! configuration and the experiment harness live in the `vflkit` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod attacks;
pub mod data;
pub mod defenses;
pub mod dimip;
pub mod engine;
mod error;
pub mod nn;
pub mod rng;
pub mod standalone;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

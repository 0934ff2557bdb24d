//! Output-constrained Koopman operator learning.
//!
//! `no_std` with `alloc`. Enable the `std` feature for faster dense products.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod datasets;
pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod linalg;
pub mod solvers;
pub mod spectral;
pub mod systems;

pub use error::{Error, Result};

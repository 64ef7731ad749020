//! Spatial confounder recovery and doubly robust ATT estimation.
//!
//! The crate is `no_std` with `alloc`. IO, parallel drivers and the command
//! line live in the `geocausal` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bootstrap;
pub mod causal;
pub mod error;
pub mod geo_field;
pub mod linalg;
pub mod optimize;
pub mod recovery;
pub mod simulation;
pub mod spatial_model;
pub mod special;

pub use error::{Error, Result};

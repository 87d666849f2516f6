//! Molecular dynamics of laser-cooled ion crystals in a Penning trap.

// `!(x > 0.0)` also rejects NaN in parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cooling;
pub mod diagnostics;
pub mod equilibrium;
pub mod error;
pub mod forces;
pub mod harness;
pub mod integrator;
pub mod modes;
pub mod model;
pub mod rng;
pub mod thermalize;

pub use error::{Error, Result};

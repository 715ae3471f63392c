//! Numerical bifurcation analysis of a porous catalyst pellet with a
//! lumped temperature and distributed concentration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collocation;
pub mod continuation;
pub mod error;
pub mod linalg;
pub mod loci;
pub mod model;
pub mod periodic;
pub mod radau;
pub mod simulate;
pub mod steady;

pub use error::{PelletError, Result};

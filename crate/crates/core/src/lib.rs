//! Thruster-assisted hybrid zero dynamics for a planar three-link biped.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod error;
pub mod forces;
pub mod gait;
pub mod hybrid;
pub mod lsq;
pub mod model;
pub mod ode;
pub mod poly;
pub mod qp;
pub mod quad;
pub mod zerodyn;

pub use error::{HzdError, Result};

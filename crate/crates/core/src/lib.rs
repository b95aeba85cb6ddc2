//! Lagrangian mechanics on Lie algebroids with nonholonomic constraints.
//!
//! The crate assembles the constrained equations of motion of a Lagrangian on
//! a Lie algebroid restricted to a subbundle, integrates them, and checks the
//! results against independent formulations: the classical Lagrange-d'Alembert
//! equations with multipliers, reduction by a symmetry group, and the maximum
//! principle for optimal control on algebroids.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algebroid;
pub mod dynamics;
pub mod error;
pub mod integrate;
mod linalg;
pub mod optimal_control;
pub mod oracle;
pub mod sampling;
pub mod smooth;
pub mod systems;

pub use error::{Error, IntegrationFailure, Result};

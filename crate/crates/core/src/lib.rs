//! Numerical laboratory for acceleration-controlled mean field games in one
//! space dimension.
//!
//! The crate solves the penalized system, where agents control their
//! acceleration and pay `eps/2 |a|^2`, together with its two vanishing-penalty
//! limits (a classical first-order MFG and an MFG of control), and measures
//! how the former approaches the latter as `eps -> 0`.
//!
//! Module map:
//! - [`model`]: running/terminal costs, Legendre transform, assumption audits
//! - [`measures`]: particle ensembles, push-forward, exact Wasserstein-1
//! - [`hjb`]: semi-Lagrangian value-function solvers
//! - [`trajectory`]: curve costs, direct minimization, Euler-Lagrange BVP
//! - [`mfg`]: Picard fixed-point drivers
//! - [`analysis`]: the eps-sweep harness and estimate audits
//! - [`config`]: JSON run configuration
//! - [`io`]: CSV/JSON artifact writers

// `!(x > 0.0)` guards also reject NaN; the numeric kernels index several
// arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod analysis;
pub mod config;
mod error;
pub mod grid;
pub mod hjb;
pub mod io;
mod linalg;
pub mod measures;
pub mod mfg;
pub mod model;
mod ot;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::Axis;

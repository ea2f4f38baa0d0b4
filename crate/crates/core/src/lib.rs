#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Numerical toolkit for non-uniform Berry–Esseen bounds.
//!
//! The crate evaluates the Stein kernel for the Kolmogorov distance, simulates
//! four normal-approximation models (fBm quadratic variation, random geometric
//! graph subgraph counts, weighted 2-runs and Erdős–Rényi subgraph counts),
//! estimates second-order Poincaré terms from difference operators, and checks
//! the resulting inequalities against Monte Carlo or exact laws.

pub mod empirical;
pub mod error;
pub mod gaussian_chaos;
pub mod graph;
pub mod harness;
pub mod poisson_geom;
pub mod rademacher;
pub mod rng;
pub mod stein;

pub use error::{Error, Result};

//! Torsion functions and Dirichlet ground states on long convex planar domains.
//!
//! The crate provides normalized convex domains described by height functions,
//! closed-form reference solutions, the cross-sectional approximation `v1`,
//! Poisson-summed Green's function kernels, a cut-cell finite-difference solver
//! for the torsion and eigenvalue problems, and experiments that measure how
//! maxima, Hessians and approximation errors scale with the domain length.

// `!(x > 0.0)` also rejects NaN; index loops mirror the stencil formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod closed_forms;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod kernel;
pub mod linalg;
pub mod output;
pub mod probe;
pub mod solver;
pub mod sum;

pub use domain::{ConvexDomain, DomainKind, DomainSpec};
pub use error::{Error, Result};

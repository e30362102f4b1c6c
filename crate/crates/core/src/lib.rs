//! Optimal experimental design for sparse-angle tomography.
//!
//! The inner problem is a regularized, linearly constrained least-squares
//! reconstruction ([`qp`]); the outer problem chooses projection weights or
//! angles that minimize the empirical Bayes risk of that reconstruction
//! ([`oed`]), with gradients from implicit differentiation of the KKT system
//! ([`sensitivity`]). Closed-form risks for the unconstrained case live in
//! [`bayesrisk`].

pub mod bayesrisk;
pub mod datagen;
pub mod io;
pub mod linalg;
pub mod oed;
pub mod parallel;
pub mod qp;
pub mod report;
pub mod rng;
pub mod sensitivity;
pub mod sparse;
pub mod tomo;

pub use sparse::{CsrMatrix, LinearOperator};
pub use tomo::{Grid, Image};

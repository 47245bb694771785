//! Multilevel quasi-Monte Carlo for the smallest eigenvalue of a parametric
//! elliptic eigenvalue problem.
//!
//! The pipeline is: a parametric coefficient series ([`coeff`]) is assembled
//! into P1 stiffness/mass pairs on a hierarchy of uniform meshes ([`fem`]);
//! the smallest eigenpair of each pair is found by inverse iteration
//! ([`eigsolve`]); expectations over the parameter box are computed with
//! randomly shifted rank-1 lattice rules built component by component
//! ([`lattice`]); and the multilevel estimator combines per-level differences
//! with an adaptive sample allocation ([`mlqmc`]).
//!
//! [`oracle`] holds brute-force references (tensor Gauss–Legendre, dense
//! eigensolves, closed-form discrete eigenvalues, exhaustive CBC search) used
//! by tests and by the validation runs. The estimator never calls into it.

pub mod banded;
pub mod coeff;
pub mod eigsolve;
pub mod error;
pub mod fem;
pub mod lattice;
pub mod mlqmc;
pub mod oracle;

pub use error::{Error, Result};

//! Numerical toolkit for measuring how far matrices and deformation fields are
//! from being volume preserving, and for constructing nearby volume-preserving
//! objects.
//!
//! * [`matrix`]: small dense matrices (n ≤ 8) with determinant, cofactor,
//!   one-sided Jacobi SVD and polar factorisation.
//! * [`nearness`]: distances and projections onto SL(n), sl(n), SO(n), so(n),
//!   sp(2n), plus certified inequality checks.
//! * [`energy`]: stored-energy functions and volumetric penalties.
//! * [`field`]: deformation fields sampled on uniform grids.
//! * [`decompose`]: divergence-free and Hamiltonian decompositions via
//!   Poisson solves.
//! * [`rearrange`]: measure-preserving approximants from discrete optimal
//!   transport, cube permutations and Hamiltonian flows.
//! * [`limits`]: the penalised incompressible-limit experiment.
//! * [`cli`]: the `volpres` command line front end.

pub mod cli;
pub mod decompose;
pub mod energy;
pub mod error;
pub mod field;
pub mod limits;
pub mod matrix;
pub mod nearness;
pub mod rearrange;
pub mod sampling;

pub use error::{Error, Result};
pub use matrix::{Matrix, PolarResult, SvdResult};
pub use nearness::{BoundReport, ProjectionResult, Target};

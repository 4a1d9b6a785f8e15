//! Curvature of spacelike graphs in Minkowski space `R^{n,1}`.
//!
//! The (η,n)-curvature of a spacelike hypersurface with principal curvatures
//! `κ` is `K_η = Π λ_i` where `λ_i = Σ_{j≠i} κ_j`. This crate provides
//! the symmetric-function algebra behind it, the graph geometry, finite
//! difference discretizations over convex domains, a continuation/Newton
//! solver for the Dirichlet problem `K_η[M_u] = ψ(x, u)`, and numerical
//! checks of the a priori estimates.

// Negated float comparisons are used on purpose so that NaN is rejected, and
// index loops read better than iterator chains in the dense kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimates;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod solver;
pub mod symfun;

pub use error::{Error, Result};
pub use estimates::{EstimateEntry, EstimateReport};
pub use expr::Expr;
pub use geometry::{GraphJet, LinearizedCoeffs, UnitNormal};
pub use grid::{DomainKind, DomainSpec, Grid, GridField, NodeMask};
pub use solver::{Equation, ProblemSpec, SolveError, SolveResult, SolverConfig};
pub use symfun::{CurvatureVector, LambdaVector, MatrixPair};

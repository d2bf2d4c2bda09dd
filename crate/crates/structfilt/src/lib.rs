//! Structure-preserving convex projection filters for piecewise-polynomial
//! PDE solvers in one spatial dimension.
//!
//! The library enforces convex pointwise constraints (positivity,
//! monotonicity, bounds) on Galerkin fields by projecting post-timestep
//! states onto the feasible set in orthonormal coordinates, optionally while
//! preserving linear functionals (element boundary values, mass) exactly.

pub mod constraint;
pub mod discretization;
pub mod filter;
pub mod harness;
pub mod orthopoly;
pub mod solvers;

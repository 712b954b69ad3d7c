//! Regularized equilibrium prices for two-agent supply/demand models.
//!
//! Supply and demand are the solutions of parametric strongly convex
//! quadratic programs. Equilibrium prices are the fixed points of the
//! nonexpansive map `T(p) = P(p − eta (S(p) − D(p)))`; since there may be
//! many, the solver returns the one nearest to a guessed price `p0` by
//! minimizing `‖p − p0‖²` over `Fix(T)`.
//!
//! The numerics are generic over [`Scalar`] (`f32`, `f64`); the aliases below
//! fix the common double-precision instantiations.

pub mod error;
pub mod gen;
pub mod harness;
pub mod linalg;
pub mod maps;
pub mod model;
pub mod qp;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelInstance64 = model::ModelInstance<f64>;
pub type ModelInstance32 = model::ModelInstance<f32>;
pub type PriceDomain64 = model::PriceDomain<f64>;
pub type QpProblem64<'a> = qp::QpProblem<'a, f64>;
pub type QpSolution64 = qp::QpSolution<f64>;
pub type MapEvaluation64 = maps::MapEvaluation<f64>;
pub type EquilibriumMap64<'a> = maps::EquilibriumMap<'a, f64>;
pub type SolveReport64 = solver::SolveReport<f64>;
pub type SolveOptions64 = solver::SolveOptions<f64>;

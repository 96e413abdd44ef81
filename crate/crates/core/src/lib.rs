//! Conic quadratic relaxations for L0-sparse smooth signal denoising.
//!
//! Fits a nonnegative signal `x` to noisy observations `y` by minimizing
//!
//! ```text
//!     ||y - x||^2 + lambda * sum_{(i,j) in E} (x_i - x_j)^2
//! ```
//!
//! subject to combinatorial sparsity priors on the support of `x` (encoded
//! through indicator variables `z`). The quadratic has an M-matrix structure
//! on the chain graph, which admits strong convex relaxations built from
//! closed-form convex hulls of two-variable fragments.
//!
//! The crate provides, roughly from the bottom up:
//!
//! - [`cone`]: a self-contained interior point solver for second-order cone
//!   programs in equality standard form, plus the [`cone::ConeProgram`]
//!   container used by everything above it.
//! - [`hull`]: closed-form evaluation of the pairwise hull functions and the
//!   most-violated-inequality computations behind the cutting-surface loop.
//! - [`relax`]: assembly of the four relaxation tiers (`l1`, `persp`,
//!   `pairwise`, `decomp`) over a problem instance, including prior
//!   constraints and registered cuts.
//! - [`cutting`]: the cutting-surface algorithm that tightens the lifted
//!   master relaxation, and a small-instance separation oracle used to
//!   cross-check it.
//! - [`lagrangian`]: dual decomposition of long chains into blocks solved in
//!   parallel, coordinated by a subgradient loop.
//! - [`exact`], [`data`]: brute-force reference solvers, rounding heuristics,
//!   and the synthetic signal pipeline used for experiments.

pub mod cone;
pub mod cutting;
pub mod data;
pub mod exact;
pub mod hull;
pub mod lagrangian;
pub mod model;
pub mod relax;

pub use model::{AdjacencyGraph, PriorKind, ProblemInstance, SolveReport, SolveStatus, SparsityPriors};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Problem data failed validation (dimensions, signs, prior bounds).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// The conic solver could not produce a usable solution.
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

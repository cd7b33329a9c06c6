//! Numerical toolkit for row contractions on truncated Fock space: characteristic
//! functions, multi-analytic operators, regularity of factorizations, functional
//! models, invariant-subspace chains, and block triangular decompositions.
//!
//! All computations happen at a finite truncation degree `N` of the Fock space.
//! Statements that involve closures or densities in infinite dimensions are
//! replaced by rank comparisons with explicit tolerances, and exactness is only
//! claimed on "interior grades" (grades `<= N - degree`), where polynomial
//! symbols are unaffected by the truncation.

pub mod blocktri;
pub mod cli;
pub mod dilation;
pub mod fileio;
pub mod fmodel;
pub mod freeword;
pub mod manop;
pub mod numsub;
pub mod regfact;
pub mod report;
pub mod rowcon;
pub mod suite;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("not a contraction: max violation {violation:.3e}")]
    NotContractive { violation: f64 },
    #[error("containment violated: residual {residual:.3e} exceeds tolerance")]
    Containment { residual: f64 },
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error("truncation-inconsistent data: {0}")]
    Truncation(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

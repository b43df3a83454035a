//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid facet: {0}")]
    InvalidFacet(String),
    #[error("evaluation point outside the supported region (no extension active)")]
    OutsideSupportedRegion,
    #[error("region must be contained in the shrunk domain")]
    RegionOutsideShrunkDomain,
    #[error("recession function unavailable for a measure with non-zero singular part")]
    RecessionUnavailable,
    #[error("recession estimate diverged: density does not have linear growth")]
    RecessionDiverges,
    #[error("unsupported disarrangement field: {0}")]
    UnsupportedDisarrangement(String),
    #[error("gradient of the smooth part is singular at {0:?}")]
    SingularGradient([f64; 3]),
    #[error("invertibility conditions violated: {0}")]
    IsdViolation(String),
    #[error("jump facet touches the domain boundary; extension rejected")]
    JumpOnBoundary,
    #[error("quadrature did not converge between refinement levels: |delta| = {0:.3e}")]
    QuadratureNotConverged(f64),
    #[error("bulk density must be declared convex for the closed-form cell value")]
    NonConvexBulk,
    #[error("no closed form for this (W, psi, p) combination; use the upper-bound mode")]
    UnsupportedClosedForm,
    #[error("slip amount is not neutral: {0} is not an integer multiple of the period")]
    NonNeutralSlip(f64),
    #[error("lattice generators are linearly dependent")]
    DependentGenerators,
    #[error("composition ranges do not match: {0}")]
    RangeMismatch(String),
    #[error("unknown density name: {0}")]
    UnknownDensity(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, SdError>;

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by the geometry, evaluation, quadrature, expansion and
/// solver layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point is singular for the stereographic projection (denominator {denominator:e})")]
    SingularPoint { denominator: f64 },

    #[error("points coincide (distance {distance:e})")]
    CoincidentPoints { distance: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("direction is degenerate: first two tangential coordinates vanish")]
    DegenerateDirection,

    #[error("sample set is empty")]
    EmptySamples,

    #[error("refinement level must be at least 1, got {0}")]
    InvalidRefinement(usize),

    #[error("integrand returned a non-finite value at node {index}")]
    NonFiniteIntegrand { index: usize },

    #[error("moment integral diverges: need 2p > n + moment power (n = {n}, moment = {moment}, p = {decay})")]
    DivergentIntegral { n: usize, moment: f64, decay: f64 },

    #[error("extrapolation did not converge: last two extrapolants differ by {difference:e}")]
    NonConvergent { difference: f64 },

    #[error("Newton search did not converge (gradient norm {gradient_norm:e})")]
    NotConverged { gradient_norm: f64 },

    #[error("linear system is singular or too ill-conditioned (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error(
        "fixed-point iteration is not contracting (differences grew for 3 consecutive steps at iteration {iteration})"
    )]
    NotContracting { iteration: usize },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

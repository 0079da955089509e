//! Numerical toolkit for the finite-dimensional reduction that builds
//! multi-bubble solutions of the prescribed boundary mean curvature problem
//! on the unit ball.
//!
//! The crate is layered bottom-up:
//!
//! * [`geometry`]: ball and half-space points, the stereographic map,
//!   Green's functions, spike configurations and sectors.
//! * [`bubbles`]: bubbles, the multi-bubble ansatz, kernels, curvature
//!   profiles, residual, nonlinearity and weighted norms.
//! * [`quadrature`]: sector grids for boundary integrals, closed-form and
//!   Monte-Carlo moments, and the auxiliary convolution estimates.
//! * [`expansion`]: the asymptotic energy, its constants, the reduced
//!   critical point and the Kazdan-Warner obstruction check.
//! * [`linearized`]: the collocation solver for the projected linear problem
//!   and the nonlinear correction.

pub mod bubbles;
pub mod error;
pub mod expansion;
pub mod geometry;
pub mod linearized;
pub mod quadrature;
pub mod special;

pub use bubbles::{
    ansatz_eval, bubble_eval, k_eval, kernel_z, nonlinearity_eval, norm_dstar, norm_star, residual_eval, BubbleField,
    KProfile, ProblemParams,
};
pub use error::{Error, Result};
pub use expansion::{
    b4_limit, compute_constants, df_dlambda_asym, energy_exact, f_asym, find_critical_point, interaction_sum,
    kazdan_warner, lambda0, CriticalPointReport, ExpansionConstants,
};
pub use geometry::{
    build_spikes, conformal_transfer, greens_function, mu_of, neumann_green, sector_of, to_ball, to_halfspace,
    BallPoint, HalfSpacePoint, SpikeConfig,
};
pub use linearized::{
    assemble, multiplier_system_diagnostics, positivity_check, solve_correction, solve_linear, CollocationSystem,
    CorrectionSolution,
};

//! Residual expansion (RE) for nonconvex least-squares problems.
//!
//! The engine in [`engine`] alternates a single parameter-update sweep of a
//! problem with an expansion of the data along its residual momentum:
//!
//! ```text
//! theta <- inner_update(theta, y_hat)
//! r     <- p (y - f(theta)) + (1 - p) r
//! y_hat <- y + alpha r
//! ```
//!
//! where `(alpha, p)` come from a penalty `mu` that ramps geometrically to 1.
//! Backends plug concrete problems into that loop: [`kmeans`],
//! [`registration`] (rigid ICP), [`opq`] (optimized product quantization),
//! [`deconv`] (regularized 1-D blind deconvolution) and the scalar
//! [`quartic`] analysis.

pub mod datasets;
pub mod deconv;
pub mod engine;
pub mod error;
pub mod kmeans;
pub mod opq;
pub mod quartic;
pub mod registration;

pub use engine::{
    admm_params, expand_target, make_schedule, run_plain, run_re, run_re_with_params,
    stability_factor, update_residual, ExpandedTarget, ExpansionState, IterationRecord, LsProblem,
    Phase, ReParams, RunOptions, RunTrace, Schedule, Variant,
};
pub use error::{Error, Result};

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's seeded generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

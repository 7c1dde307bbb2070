//! Lifelong learning of shared linear representations.
//!
//! Tasks are halfspaces `y = sign(<a_i, x>)` whose normals all lie in an unknown
//! `k`-dimensional subspace of `R^d`. The crate provides
//!
//! - [`geometry`]: orthonormal subspaces, projections and principal angles,
//! - [`synthetic`]: planted problems, seeded task streams and exact error evaluation,
//! - [`learner`]: single-task halfspace learners (full space, restricted, adversarial),
//! - [`refinement`]: the max-distance subspace fitting relaxation, its solver and rounding,
//! - [`driver`]: the Basic, refinement (RR) and joint-training loops with full accounting,
//! - [`lowerbound`]: the adversarial construction behind the `d k^1.5 / eps` lower bound.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod geometry;
pub mod learner;
pub mod lowerbound;
pub mod refinement;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{AngleSpectrum, Subspace, Vector};

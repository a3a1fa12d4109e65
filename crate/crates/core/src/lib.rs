//! Parareal time-parallel integration of Stratonovich SDEs that carry
//! conserved quantities.
//!
//! The numerical core is generic over the floating point type through
//! [`Scalar`]; the aliases at the bottom of this file fix it to `f64`, which
//! is what the CLI and the experiment harness use.
//!
//! Layout:
//! - [`model`]: SDE models, the built-in benchmark systems, conservation checks.
//! - [`noise`]: per-path Wiener increments shared by the coarse and fine propagators.
//! - [`schemes`]: one-step maps (Euler-Maruyama, Milstein, implicit midpoint).
//! - [`projection`]: projection onto the invariant manifold.
//! - [`parareal`]: the parareal driver, with optional projected correction.
//! - [`metrics`]: Monte-Carlo error estimators and strong-order fits.
//! - [`cli`]: manifests, commands and CSV output for the `parapath` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
mod linalg;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod parareal;
pub mod projection;
pub mod scalar;
pub mod schemes;

pub use error::{Error, Result};
pub use metrics::{mean_square_error, strong_order_fit, ExperimentReport};
pub use model::{make_model, ModelSpec, VectorFields};
pub use noise::{truncated_increment, NoiseGrid};
pub use parareal::{PararealConfig, PararealSolver, PararealState, RunOptions};
pub use projection::{project, Manifold, ProjectionConfig};
pub use scalar::Scalar;
pub use schemes::{PropagatorSpec, Scheme, StepMap};

/// Double precision model.
pub type Model = ModelSpec<f64>;
/// Double precision noise grid.
pub type Grid = NoiseGrid<f64>;
pub type Propagator = PropagatorSpec<f64>;
pub type Config = PararealConfig<f64>;
pub type Report = ExperimentReport<f64>;

/// Single precision variants, mostly useful for throughput experiments.
pub type Model32 = ModelSpec<f32>;
pub type Grid32 = NoiseGrid<f32>;
pub type Config32 = PararealConfig<f32>;

//! Gaussian-mixture distribution steering for chance-constrained trajectory design.
//!
//! The pipeline splits the state distribution into a Gaussian mixture, propagates each
//! component through two-body dynamics with linearized covariance propagation, collapses
//! the mixture at every control node, and applies an affine feedback law. A sequential
//! quadratic programming solver tunes the open-loop impulses and feedback gains under
//! control-magnitude chance constraints and terminal moment constraints, and a Monte Carlo
//! harness checks the resulting policy against the nonlinear dynamics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod montecarlo;
pub mod nlp;
pub mod ode;
pub mod policy;
pub mod scenario;
pub mod split;
pub mod steering;
pub mod units;

pub use error::{Error, Result};
pub use gaussian::{collapse, Gaussian, GaussianMixture, WeightedComponent};
pub use linalg::covariance_sqrt;
pub use policy::ControlPolicy;
pub use split::{generate_split_library, split_gaussian, SplitLibrary};

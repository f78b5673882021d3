//! Statistical auditing of machine unlearning.
//!
//! A pending-audit feature set is modelled as a mixture of a member
//! population and a non-member population. The fraction drawn from the
//! non-member side is the *forgetting rate* α. Three estimators are provided:
//!
//! | estimator | module | what it matches |
//! |-----------|--------|-----------------|
//! | `smia0`   | [`smia0`]     | first and second moments |
//! | `smia_m`  | [`kernel`]    | kernel mean embeddings (closed-form QP) |
//! | `smia_w`  | [`transport`] | entropy-regularized Wasserstein distances |
//!
//! Each estimator is a [`bootstrap::PointEstimator`]; [`bootstrap::run_bootstrap_audit`]
//! turns a point estimate into a percentile interval and an [`io::AuditReport`].
//!
//! [`bounds`] evaluates the generalization-style error bounds that motivate
//! auditing at the distribution level, and [`synth`] produces known-α fixtures.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod bounds;
pub mod error;
pub mod io;
pub mod kernel;
pub mod matrix;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod smia0;
pub mod stats;
pub mod synth;
pub mod transport;

pub use error::{AuditError, Result};
pub use matrix::FeatureMatrix;

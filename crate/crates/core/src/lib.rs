//! Target contrastive pessimistic (TCP) risk minimization.
//!
//! A TCP classifier starts from a classifier fitted on labeled source data and
//! only moves away from it when the move lowers the empirical risk on the
//! unlabeled target samples for *every* possible labeling of those samples.
//! The estimator is the saddle point of a convex-linear minimax problem: an
//! exact minimization over model parameters against a projected gradient
//! ascent over soft labelings constrained to the probability simplex.
//!
//! Two model families are provided:
//!
//! * [`ls`]: linear least-squares classifiers on one-hot targets.
//! * [`da`]: linear and quadratic discriminant analysis.
//!
//! The remaining modules hold the experimental apparatus: CSV loading
//! ([`data`]), biased subsampling ([`bias`]), metrics ([`eval`]) and the
//! experiment drivers ([`experiment`]).

pub mod bias;
pub mod da;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod ls;
pub mod model;
pub mod pca;
pub mod saddle;
pub mod simplex;

pub use error::{Error, Result};
pub use exec::Execution;

//! Estimation of the source-condition exponent μ of a linear ill-posed problem
//! `A x = y` from the residual and gradient norms of a Landweber run.
//!
//! The pipeline is
//!
//! 1. build or load a problem ([`problems`]),
//! 2. run Landweber and record `R_k = ‖A x_k − y‖`, `G_k = ‖A*(A x_k − y)‖` ([`landweber`]),
//! 3. regress `log G` on `log R` over every prefix, convert the slope to μ and
//!    read the estimate off a stable window ([`estimator`]),
//! 4. cross-check with error bounds, a Tikhonov rate experiment and an SVD
//!    summability test ([`validation`]).
//!
//! [`experiment`] and [`config`] wire these together for the command-line tool.

// `!(x > 0.0)` guards deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod landweber;
pub mod operator;
pub mod problems;
pub mod validation;

pub use error::{Error, ErrorClass, Result};
pub use estimator::{
    estimate_track, gamma_to_mu, mu_to_model, regress_prefix, EstimateTrack, EstimatorConfig,
    MuFromGamma, SourceConditionModel, Verdict,
};
pub use exec::Execution;
pub use landweber::{landweber_run, InitialGuess, IterationTrace, LandweberConfig, StepSize};
pub use operator::{DenseMatrix, Kernel, LinearOperator, SpectralDecomposition};
pub use problems::{add_noise, NoisyData, ProblemSpec};

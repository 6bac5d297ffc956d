//! Statistical analysis and simulation engine for Bell-test experiments.
//!
//! The crate covers the full pipeline of a hypothesis test against local
//! realism:
//!
//! * [`scenario`]: settings/outcomes bookkeeping, joint distributions with
//!   fixed setting probabilities, Bell functionals (CHSH included).
//! * [`lr`]: the local-realistic polytope as an explicit mixture of
//!   deterministic strategies, Kullback-Leibler projection onto it, and
//!   prediction-based-ratio (PBR) tables with a rigorous local-realism bound.
//! * [`estimation`]: constrained maximum-likelihood estimation of outcome
//!   distributions from trial counts, with smoothing and block scheduling.
//! * [`protocols`]: running p-value protocols (PBR, martingale, standard
//!   deviation) and their asymptotic confidence-gain rates.
//! * [`chsh`]: a simulator for two-qubit CHSH experiments with partial
//!   entanglement, detection efficiency, and visibility.
//! * [`format`]: plain-text file formats for trials, distributions, and
//!   Bell functionals.

// Validation code uses `!(a <= b)` on purpose so that NaN counts as a
// violation; reference constants keep every digit their source printed.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision)]

pub mod chsh;
pub mod estimation;
pub mod format;
pub mod lr;
pub mod protocols;
pub mod scenario;
pub mod stats;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;

//! Group-sparse recovery for grant-free massive access.
//!
//! The crate covers the whole pipeline for joint activity detection and
//! channel estimation (JADCE):
//!
//! * [`signal_model`] draws preambles, channels, activity and noise and lifts
//!   the complex system `Y = S X + Z` into its real-valued counterpart.
//! * [`operators`] holds the row-wise shrinkage (MSTO) and its derivative,
//!   mixed norms, the group-LASSO objective and coherence measures.
//! * [`solvers`] runs ISTA-GS and its accelerated (FISTA) variant.
//! * [`coherence_weights`] pre-computes analysis weights for ALISTA-GS.
//! * [`unrolled_nets`] implements LISTA-GS, LISTA-GSCP and ALISTA-GS with
//!   hand-derived gradients, Adam and the layer-wise training schedule.
//! * [`theory_checks`] turns the convergence results into executable checks.
//! * [`metrics`] computes NMSE, SNR and activity-detection errors.
//!
//! All arrays are dense `nalgebra` matrices. Batches of samples are stored
//! side by side in one matrix (see [`batch::StackedBatch`]) so every layer is
//! a handful of large matrix products.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod coherence_weights;
pub mod container;
mod error;
pub mod linalg;
pub mod metrics;
pub mod operators;
pub mod rng;
pub mod signal_model;
pub mod solvers;
pub mod theory_checks;
pub mod unrolled_nets;

pub use error::{Error, Result};

/// Real-valued dense matrix used throughout the lifted domain.
pub type RMat = nalgebra::DMatrix<f64>;
/// Complex dense matrix used for the physical (unlifted) system.
pub type CMat = nalgebra::DMatrix<Complex64>;

pub use nalgebra::Complex;
pub type Complex64 = Complex<f64>;

/// Default group-LASSO regularization weight.
pub const DEFAULT_LAMBDA: f64 = 0.1;

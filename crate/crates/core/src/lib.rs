//! Hierarchical low-rank reconstruction of undersampled dynamic MRI.
//!
//! The image sequence `Z` (one vectorized frame per column) is modeled as a
//! mean image plus a low-rank matrix plus a small residual,
//! `Z = zbar 1^T + X + E`, and recovered level by level from per-frame
//! undersampled measurements `y_k = A_k z_k`:
//!
//! - [`hierarchical::estimate_mean`]: least-squares mean image by CGLS,
//! - [`altgdmin::altgdmin_run`]: the low-rank part by alternating GD and minimization,
//! - [`hierarchical::mec_unstructured`] / [`hierarchical::mec_ista`]: the residual.
//!
//! [`tracking`] provides mini-batch and online variants for streaming data.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod altgdmin;
pub mod cgls;
pub mod datagen;
mod error;
pub mod hierarchical;
pub mod metrics;
pub mod numerics;
pub mod operators;
pub mod sampling;
pub mod tracking;

pub use error::{Error, Result, Stage};
pub use numerics::{CMatrix, CVector, OrthonormalBasis, C64};
pub use operators::{FrameOperator, MeasurementSet};

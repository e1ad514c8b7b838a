//! Numerical laboratory for trilinear Fourier extension estimates on
//! hypersurfaces with flat two-dimensional foliations.

// Validation writes `!(x > 0.0)` so that NaN is rejected too; index loops walk several
// per-axis arrays in step.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod experiments;
pub mod geometry;
pub mod models;
pub mod numeric;
pub mod packets;
pub mod tables;
pub mod waves;

//! Photon-echo optical memory with controlled reversible inhomogeneous
//! broadening: a Stark-broadened absorption peak stores a weak pulse and
//! re-emits it when the field polarity is reversed.
//!
//! Modules follow the pipeline: [`spectral`] describes the prepared line,
//! [`propagation`] integrates the field through it, [`analytics`] holds the
//! closed-form efficiency model and decay fit, [`detection`] turns output
//! fields into photon counts, and [`harness`] wires named scenarios to
//! config files and output tables.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod detection;
pub mod error;
pub mod harness;
pub mod propagation;
pub mod spectral;

pub use error::{CribError, Result};

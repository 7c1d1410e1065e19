//! Weakly-supervised object detection with positive-unlabeled (PU)
//! classification losses.
//!
//! The crate bundles everything needed to run incomplete-annotation
//! detection experiments end to end: a minimal reverse-mode autodiff
//! engine, a synthetic dataset generator with annotation-degradation
//! strategies, an anchor-grid detector, the PU loss family (binary and
//! multi-class, with non-negative clamping) alongside the supervised
//! baselines, class-prior selection and dynamic updates, a deterministic
//! Adam training loop, and a detection evaluation harness with paired
//! statistics.
//!
//! With the default `parallel` feature, data-parallel stages (dataset
//! generation, tiled inference, prior sweeps, independent runs) use
//! rayon; disabling the feature falls back to sequential execution with
//! identical results.

pub mod autodiff;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
mod parallel;
pub mod priors;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

//! Robust-training toolkit for piecewise-linear ECG classifiers.
//!
//! Builds and trains ReLU networks whose output is, within a linear region,
//! exactly `z = Wᵀx + b`; exposes the effective linear form, two
//! noise-to-signal-ratio regularized losses with frozen-mask double
//! backpropagation, PGD and SPSA attack engines, the MIT-BIH heartbeat CSV
//! pipeline, an Adamax training loop, and robustness reporting.

pub mod attacks;
pub mod checks;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod nn;
pub mod report;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod tensor;

pub use error::{NsrError, Result};

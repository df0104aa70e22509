//! Compressive sensing with partial circulant measurement operators.
//!
//! The crate covers the whole measurement pipeline used by the `cs-bench`
//! harness:
//!
//! - [`sensing`]: circulant and dense random operators with an FFT fast path.
//! - [`signals`]: sparse spike generators and additive Gaussian noise.
//! - [`bayes`]: sparse Bayesian reconstruction by evidence maximization.
//! - [`bp`]: L1-regularized least squares by proximal gradient.
//! - [`metrics`]: reconstruction error, MSE, correlation and timers.
//! - [`bench`]: seeded trials, sweeps, aggregation and CSV / plot output.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod bench;
pub mod bp;
pub mod error;
pub mod metrics;
pub mod sensing;
pub mod signals;

pub use bayes::{reconstruct_bayes, BayesConfig};
pub use bp::{reconstruct_bp, BpConfig};
pub use error::{CsError, Result};
pub use sensing::{EntryDistribution, SensingOperator};
pub use signals::{MeasurementVector, SparseSignal};

/// Output of either reconstruction algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub estimate: Vec<f64>,
    /// Noise variance estimate, when the solver produces one.
    pub estimated_noise_variance: Option<f64>,
    /// Entries with `|v| > support_tol * max |v|`.
    pub support_size: usize,
    /// Entries with `|v| > 0`.
    pub raw_support_size: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Seconds spent inside the solver.
    pub recovery_time: f64,
}

impl ReconstructionResult {
    pub(crate) fn new(
        estimate: Vec<f64>,
        support_tol: f64,
        estimated_noise_variance: Option<f64>,
        iterations: usize,
        converged: bool,
        recovery_time: f64,
    ) -> Self {
        let (support_size, raw_support_size) = support_sizes(&estimate, support_tol);
        Self {
            estimate,
            estimated_noise_variance,
            support_size,
            raw_support_size,
            iterations,
            converged,
            recovery_time,
        }
    }
}

/// Thresholded and raw nonzero counts of `v`; the threshold is relative to
/// `max |v|`.
pub fn support_sizes(v: &[f64], rel_tol: f64) -> (usize, usize) {
    let peak = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let thresh = rel_tol * peak;
    let thresholded = v.iter().filter(|x| x.abs() > thresh).count();
    let raw = v.iter().filter(|x| **x != 0.0).count();
    (thresholded, raw)
}

//! Reconstruction quality metrics and section timers.
//!
//! All quality metrics return fractions; percentage formatting belongs to
//! the presentation layer.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::signals::SparseSignal;

fn check_lengths(s: &SparseSignal, s_hat: &[f64]) -> Result<()> {
    if s.n() != s_hat.len() {
        return Err(CsError::InvalidDimension(format!(
            "metric inputs differ in length: {} vs {}",
            s.n(),
            s_hat.len()
        )));
    }
    Ok(())
}

/// `||s_hat - s|| / ||s||`.
pub fn reconstruction_error(s: &SparseSignal, s_hat: &[f64]) -> Result<f64> {
    check_lengths(s, s_hat)?;
    let norm = s.norm();
    if norm == 0.0 {
        return Err(CsError::UndefinedMetric(
            "reconstruction error of a zero reference signal".into(),
        ));
    }
    let diff = s
        .values()
        .iter()
        .zip(s_hat)
        .map(|(a, b)| (b - a).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// `(1/N) * sum (s_i - s_hat_i)^2`.
pub fn mean_square_error(s: &SparseSignal, s_hat: &[f64]) -> Result<f64> {
    check_lengths(s, s_hat)?;
    if s.n() == 0 {
        return Err(CsError::InvalidDimension("mean square error of empty signals".into()));
    }
    let sum: f64 = s.values().iter().zip(s_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sum / s.n() as f64)
}

/// Pearson correlation, computed on mean-centered values (the raw-sum form
/// cancels badly when the mean is large against the spread). `None` when
/// either input has zero variance.
pub fn correlation(s: &SparseSignal, s_hat: &[f64]) -> Result<Option<f64>> {
    check_lengths(s, s_hat)?;
    let n = s.n();
    if n < 2 {
        return Err(CsError::InvalidDimension(
            "correlation needs at least two samples".into(),
        ));
    }
    let x = s.values();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = s_hat.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(s_hat) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    // A constant input still leaves deviations of a few ulps after
    // centering.
    let floor = |v: &[f64]| {
        let peak = v.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        nf * (8.0 * f64::EPSILON * peak).powi(2)
    };
    if sxx <= floor(x) || syy <= floor(s_hat) {
        return Ok(None);
    }
    let cc = sxy / (sxx * syy).sqrt();
    if cc.abs() > 1.0 + 1e-12 {
        return Err(CsError::UndefinedMetric(format!(
            "correlation {cc} exceeds unit magnitude beyond rounding"
        )));
    }
    Ok(Some(cc.clamp(-1.0, 1.0)))
}

/// Timed section of the measurement pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Sampling,
    Recovery,
    Total,
}

/// Monotone-clock interval timer.
#[derive(Debug)]
pub struct Stopwatch {
    section: Section,
    started: Instant,
}

impl Stopwatch {
    pub fn start(section: Section) -> Self {
        Self {
            section,
            started: Instant::now(),
        }
    }

    pub fn section(&self) -> Section {
        self.section
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    /// Stops the timer, returning seconds.
    pub fn stop(self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }
}

/// Runs `f` under a stopwatch.
pub fn timed<T>(section: Section, f: impl FnOnce() -> T) -> (T, f64) {
    let sw = Stopwatch::start(section);
    let out = f();
    (out, sw.stop())
}

/// Quality and timing figures for one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub re: f64,
    pub mse: f64,
    /// `None` when the correlation is undefined.
    pub cc: Option<f64>,
    pub support_size: usize,
    pub t_s: f64,
    pub t_r: f64,
    pub t_p: f64,
}

impl MetricReport {
    /// Computes quality metrics for `s_hat` against `s` and attaches timings.
    pub fn evaluate(
        s: &SparseSignal,
        s_hat: &[f64],
        support_size: usize,
        t_s: f64,
        t_r: f64,
        t_p: f64,
    ) -> Result<Self> {
        let report = Self {
            re: reconstruction_error(s, s_hat)?,
            mse: mean_square_error(s, s_hat)?,
            cc: correlation(s, s_hat)?,
            support_size,
            t_s,
            t_r,
            t_p,
        };
        debug_assert!(report.t_p >= report.t_s.max(report.t_r));
        Ok(report)
    }
}

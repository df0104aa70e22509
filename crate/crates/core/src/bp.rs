//! Basis pursuit denoising: minimizes `F(s) = ||r - Phi s||^2 + z ||s||_1`
//! by accelerated proximal gradient with backtracking and adaptive restart.
//!
//! A step is only accepted when it does not increase `F`, so the objective
//! is monotone. Termination is decided by the coordinate-wise subgradient
//! certificate, not by the iteration count.

use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::metrics::{Section, Stopwatch};
use crate::sensing::SensingOperator;
use crate::signals::MeasurementVector;
use crate::ReconstructionResult;

/// Step-size policy for the gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "eta")]
pub enum StepRule {
    Fixed(f64),
    Backtracking,
}

/// Choice of the L1 weight `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum Regularization {
    /// `sigma * sqrt(2 ln n)`, with `sigma` the known noise level or a MAD
    /// estimate from the measurements; `1e-6 * ||Phi^T r||_inf` when the
    /// noise level is zero.
    Universal,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpConfig {
    pub z: Regularization,
    pub step_rule: StepRule,
    /// Stagnation threshold on the relative objective change.
    pub tol: f64,
    pub max_iter: usize,
    /// Support threshold as a fraction of `max |estimate|`.
    pub support_tol: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            z: Regularization::Universal,
            step_rule: StepRule::Backtracking,
            tol: 1e-14,
            max_iter: 20_000,
            support_tol: 1e-6,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if let Regularization::Fixed(z) = self.z {
            if !(z > 0.0 && z.is_finite()) {
                return Err(CsError::InvalidConfig(format!("z must be positive, got {z}")));
            }
        }
        if let StepRule::Fixed(eta) = self.step_rule {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(CsError::InvalidConfig(format!("step must be positive, got {eta}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(CsError::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(CsError::InvalidConfig("max_iter must be >= 1".into()));
        }
        if !(self.support_tol >= 0.0) {
            return Err(CsError::InvalidConfig("support_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// `sign(x_i) * max(|x_i| - t, 0)`.
pub fn soft_threshold(x: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(CsError::InvalidParameter(format!("threshold must be >= 0, got {t}")));
    }
    Ok(x.iter().map(|&v| shrink(v, t)).collect())
}

#[inline]
fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median-absolute-deviation scale estimate (consistent for Gaussians).
pub fn mad_sigma(values: &[f64]) -> f64 {
    let med = median(values.to_vec());
    median(values.iter().map(|v| (v - med).abs()).collect()) / 0.674_489_750_196_081_7
}

/// Resolves the L1 weight for this problem; always positive.
pub fn resolve_z(op: &SensingOperator, r: &MeasurementVector, cfg: &BpConfig) -> Result<f64> {
    match cfg.z {
        Regularization::Fixed(z) => Ok(z),
        Regularization::Universal => {
            let sigma = r.noise_sigma().unwrap_or_else(|| mad_sigma(r.values()));
            let n = op.n() as f64;
            let z = sigma * (2.0 * n.max(2.0).ln()).sqrt();
            if z > 0.0 {
                return Ok(z);
            }
            let small = 1e-6 * norm_inf(&op.adjoint_apply(r.values())?);
            Ok(if small > 0.0 { small } else { 1.0 })
        }
    }
}

/// `||r - Phi s||^2 + z ||s||_1`.
pub fn objective(op: &SensingOperator, r: &[f64], s: &[f64], z: f64) -> Result<f64> {
    let fit = op.apply(s)?;
    let sq: f64 = fit.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sq + z * norm1(s))
}

/// Coordinate-wise first-order optimality check for `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// Largest subgradient violation over all coordinates.
    pub max_violation: f64,
    pub tolerance: f64,
}

impl Certificate {
    pub fn holds(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

/// With `g = 2 Phi^T (Phi s - r)`: on the support `|g_i + z sign(s_i)|` must
/// vanish, off it `|g_i| <= z`. Tolerance is `1e-6 (1 + ||Phi^T r||_inf)`.
pub fn optimality_certificate(op: &SensingOperator, r: &[f64], s: &[f64], z: f64) -> Result<Certificate> {
    let fit = op.apply(s)?;
    let resid: Vec<f64> = fit.iter().zip(r).map(|(a, b)| a - b).collect();
    let grad: Vec<f64> = op.adjoint_apply(&resid)?.into_iter().map(|g| 2.0 * g).collect();
    let tolerance = 1e-6 * (1.0 + norm_inf(&op.adjoint_apply(r)?));
    Ok(Certificate {
        max_violation: violation(&grad, s, z),
        tolerance,
    })
}

fn violation(grad: &[f64], s: &[f64], z: f64) -> f64 {
    grad.iter()
        .zip(s)
        .map(|(&g, &v)| {
            if v > 0.0 {
                (g + z).abs()
            } else if v < 0.0 {
                (g - z).abs()
            } else {
                (g.abs() - z).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Solves from the zero vector.
pub fn reconstruct_bp(op: &SensingOperator, r: &MeasurementVector, cfg: &BpConfig) -> Result<ReconstructionResult> {
    reconstruct_bp_from(op, r, cfg, None)
}

/// Solves from `start` (or zero).
pub fn reconstruct_bp_from(
    op: &SensingOperator,
    r: &MeasurementVector,
    cfg: &BpConfig,
    start: Option<&[f64]>,
) -> Result<ReconstructionResult> {
    let timer = Stopwatch::start(Section::Recovery);
    cfg.validate()?;
    if r.len() != op.m() {
        return Err(CsError::InvalidDimension(format!(
            "measurement length {} != operator m = {}",
            r.len(),
            op.m()
        )));
    }
    let z = resolve_z(op, r, cfg)?;
    let rv = r.values();
    let mut x = match start {
        Some(s) if s.len() != op.n() => {
            return Err(CsError::InvalidDimension(format!(
                "start length {} != n = {}",
                s.len(),
                op.n()
            )))
        }
        Some(s) => s.to_vec(),
        None => vec![0.0; op.n()],
    };
    let tolerance = 1e-6 * (1.0 + norm_inf(&op.adjoint_apply(rv)?));

    let residual = |s: &[f64]| -> Result<Vec<f64>> { Ok(op.apply(s)?.iter().zip(rv).map(|(a, b)| a - b).collect()) };
    let gradient =
        |res: &[f64]| -> Result<Vec<f64>> { Ok(op.adjoint_apply(res)?.into_iter().map(|g| 2.0 * g).collect()) };
    let sq = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>();

    let res_x = residual(&x)?;
    let mut f_x = sq(&res_x) + z * norm1(&x);
    let mut grad_x = gradient(&res_x)?;
    let mut converged = violation(&grad_x, &x, z) <= tolerance;

    let mut lipschitz = match cfg.step_rule {
        StepRule::Fixed(eta) => 1.0 / eta,
        StepRule::Backtracking => 1.0,
    };
    let mut y = x.clone();
    let mut grad_y = grad_x.clone();
    let mut f_y_smooth = sq(&res_x);
    let mut t: f64 = 1.0;
    let mut iterations = 0;
    let mut restarted_at_x = true;

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let (cand, res_c) = loop {
            let step = 1.0 / lipschitz;
            let cand: Vec<f64> = y
                .iter()
                .zip(&grad_y)
                .map(|(&yi, &gi)| shrink(yi - step * gi, z * step))
                .collect();
            let res_c = residual(&cand)?;
            if let StepRule::Fixed(_) = cfg.step_rule {
                break (cand, res_c);
            }
            let mut lin = 0.0;
            let mut dist = 0.0;
            for ((c, yi), g) in cand.iter().zip(&y).zip(&grad_y) {
                let d = c - yi;
                lin += g * d;
                dist += d * d;
            }
            let upper = f_y_smooth + lin + 0.5 * lipschitz * dist;
            if sq(&res_c) <= upper + 1e-12 * f_y_smooth.abs() {
                break (cand, res_c);
            }
            lipschitz *= 2.0;
            if !lipschitz.is_finite() {
                return Err(CsError::Diverged { iteration: iterations });
            }
        };
        let f_c = sq(&res_c) + z * norm1(&cand);
        if !f_c.is_finite() {
            return Err(CsError::Diverged { iteration: iterations });
        }

        if f_c <= f_x {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            let next_y: Vec<f64> = cand.iter().zip(&x).map(|(c, xi)| c + momentum * (c - xi)).collect();
            let rel_change = (f_x - f_c) / f_x.max(f64::MIN_POSITIVE);
            debug_assert!(f_c <= f_x);
            x = cand;
            f_x = f_c;
            grad_x = gradient(&res_c)?;
            t = t_next;
            converged = violation(&grad_x, &x, z) <= tolerance;
            if converged || rel_change <= cfg.tol {
                break;
            }
            y = next_y;
            let res_y = residual(&y)?;
            f_y_smooth = sq(&res_y);
            grad_y = gradient(&res_y)?;
            restarted_at_x = false;
        } else {
            if restarted_at_x {
                // A plain proximal step from x no longer descends.
                break;
            }
            t = 1.0;
            y = x.clone();
            grad_y = grad_x.clone();
            f_y_smooth = f_x - z * norm1(&x);
            restarted_at_x = true;
        }
    }

    let recovery_time = timer.stop();
    Ok(ReconstructionResult::new(
        x,
        cfg.support_tol,
        None,
        iterations,
        converged,
        recovery_time,
    ))
}

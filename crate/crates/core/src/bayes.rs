//! Sparse Bayesian reconstruction by evidence maximization.
//!
//! Every coefficient `s_i` carries a zero-mean Gaussian prior with precision
//! `a_i`; the measurements carry Gaussian noise with precision `b`. For fixed
//! `(a, b)` the posterior over the active coefficients is Gaussian with
//!
//! ```text
//! sigma = (b * Phi^T Phi + diag(a))^-1
//! mu    = b * sigma * Phi^T r
//! ```
//!
//! and the hyperparameters are re-estimated with the type-II maximum
//! likelihood fixed point
//!
//! ```text
//! gamma_i = 1 - a_i * sigma_ii
//! a_i     = gamma_i / mu_i^2
//! b       = (M - sum gamma) / ||r - Phi mu||^2
//! ```
//!
//! [`BayesAlgorithm::AllActive`] starts from the full model and updates
//! everything at once, pruning coefficients whose precision passes
//! `a_prune`. [`BayesAlgorithm::Sequential`] adds, deletes or re-estimates
//! coefficients by their exact evidence gain and touches `b` only once the
//! model has settled. The default [`BayesAlgorithm::Hybrid`] runs the first
//! until it slows down and finishes with the second.
//!
//! Learning `b` freely on noisy, underdetermined data drives it to its cap
//! (the model ends up interpolating the noise with about `M` coefficients).
//! When the measurements carry their noise level, `b` is therefore capped at
//! `1 / sigma^2` by default.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::metrics::{Section, Stopwatch};
use crate::sensing::SensingOperator;
use crate::signals::MeasurementVector;
use crate::ReconstructionResult;

/// How an initial hyperparameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum InitRule {
    /// Derived from the measurement power `v = ||r||^2 / M`:
    /// `a0 = 1 / v`, `b0 = 1 / (0.01 v)`.
    FromData,
    Fixed(f64),
}

/// Order in which the hyperparameters are re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BayesAlgorithm {
    /// `AllActive` until the relative change of `a` drops below
    /// `hybrid_switch`, then `Sequential` from that state.
    #[default]
    Hybrid,
    /// Start from an empty model; each iteration adds or deletes the
    /// coefficient with the largest evidence gain, or re-estimates every
    /// active `a` together (falling back to a single coefficient when the
    /// joint step loses evidence). Fast, but the greedy start occasionally
    /// locks onto a wrong support.
    Sequential,
    /// Start with every coefficient active at `a0` and update all of them
    /// at once; the active set only shrinks. Robust but slow to converge.
    AllActive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesConfig {
    pub a0_rule: InitRule,
    pub b0_rule: InitRule,
    pub algorithm: BayesAlgorithm,
    /// Re-estimate `b` from the data; otherwise it stays at `b0`.
    pub learn_noise: bool,
    /// Relative change of `a` at which `Hybrid` switches schedules.
    pub hybrid_switch: f64,
    /// When the measurements carry their noise level `sigma`, `b` never
    /// exceeds `1 / sigma^2`.
    pub use_known_noise: bool,
    /// Convergence threshold on the maximum relative change of `a`.
    pub tol: f64,
    pub max_iter: usize,
    /// Precision above which a coefficient is pruned.
    pub a_prune: f64,
    /// Cap on the noise precision (reached on exact fits).
    pub b_max: f64,
    /// Support threshold as a fraction of `max |estimate|`.
    pub support_tol: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            a0_rule: InitRule::FromData,
            b0_rule: InitRule::FromData,
            algorithm: BayesAlgorithm::default(),
            learn_noise: true,
            hybrid_switch: 0.1,
            use_known_noise: true,
            tol: 1e-8,
            max_iter: 1000,
            a_prune: 1e12,
            b_max: 1e12,
            support_tol: 1e-6,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CsError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("tol", self.tol)?;
        positive("a_prune", self.a_prune)?;
        positive("b_max", self.b_max)?;
        positive("hybrid_switch", self.hybrid_switch)?;
        if !(self.support_tol >= 0.0) {
            return Err(CsError::InvalidConfig("support_tol must be >= 0".into()));
        }
        if self.max_iter == 0 {
            return Err(CsError::InvalidConfig("max_iter must be >= 1".into()));
        }
        for (name, rule) in [("a0_rule", self.a0_rule), ("b0_rule", self.b0_rule)] {
            if let InitRule::Fixed(v) = rule {
                positive(name, v)?;
            }
        }
        Ok(())
    }
}

/// Dense quantities shared by every iteration: `Phi`, `Phi^T r` and the
/// Gram matrix `Phi^T Phi`, whose columns are computed on first use.
#[derive(Debug, Clone)]
pub struct BayesProblem {
    phi: DMatrix<f64>,
    phi_t_r: DVector<f64>,
    r: DVector<f64>,
    noise_sigma: Option<f64>,
    col_norms: Vec<f64>,
    gram: OnceLock<DMatrix<f64>>,
    gram_cols: Vec<OnceLock<DVector<f64>>>,
}

impl BayesProblem {
    pub fn new(op: &SensingOperator, r: &MeasurementVector) -> Result<Self> {
        if r.len() != op.m() {
            return Err(CsError::InvalidDimension(format!(
                "measurement length {} != operator m = {}",
                r.len(),
                op.m()
            )));
        }
        let phi = op.to_dense()?;
        let noise_sigma = r.noise_sigma();
        let r = DVector::from_column_slice(r.values());
        let phi_t_r = phi.tr_mul(&r);
        let col_norms = phi.column_iter().map(|c| c.norm_squared()).collect();
        let gram_cols = (0..phi.ncols()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            phi,
            phi_t_r,
            r,
            noise_sigma,
            col_norms,
            gram: OnceLock::new(),
            gram_cols,
        })
    }

    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Full `Phi^T Phi`.
    pub fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| self.phi.tr_mul(&self.phi))
    }

    /// Column `j` of `Phi^T Phi`.
    pub fn gram_col(&self, j: usize) -> &DVector<f64> {
        self.gram_cols[j].get_or_init(|| match self.gram.get() {
            Some(g) => g.column(j).into_owned(),
            None => self.phi.tr_mul(&self.phi.column(j)),
        })
    }

    /// `Phi^T Phi` restricted to rows and columns `idx`.
    fn gram_block(&self, idx: &[usize]) -> DMatrix<f64> {
        let k = idx.len();
        match self.gram.get() {
            Some(g) => DMatrix::from_fn(k, k, |p, q| g[(idx[p], idx[q])]),
            None => {
                let cols: Vec<&DVector<f64>> = idx.iter().map(|&j| self.gram_col(j)).collect();
                DMatrix::from_fn(k, k, |p, q| cols[q][idx[p]])
            }
        }
    }

    pub fn phi_t_r(&self) -> &DVector<f64> {
        &self.phi_t_r
    }

    pub fn measurements(&self) -> &DVector<f64> {
        &self.r
    }

    fn measurement_power(&self) -> f64 {
        self.r.norm_squared() / self.m() as f64
    }

    /// `||r - Phi mu||^2` with `mu` supported on `idx`.
    fn residual_norm2(&self, mu: &[f64], idx: &[usize]) -> f64 {
        let mut res = self.r.clone();
        for &i in idx {
            res.axpy(-mu[i], &self.phi.column(i), 1.0);
        }
        res.norm_squared()
    }

    /// Returns a problem with measurements scaled by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.phi_t_r *= alpha;
        out.r *= alpha;
        out
    }
}

/// Hyperparameters and Gaussian posterior over the active coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    /// Per-coefficient prior precision; entries outside the model hold a
    /// value `>= a_prune`.
    pub a: Vec<f64>,
    /// Noise precision.
    pub b: f64,
    /// Sorted indices in the model.
    pub active: Vec<usize>,
    /// Posterior mean over all `n` coefficients (zero off the active set).
    pub mu: Vec<f64>,
    /// Posterior covariance over the active set, in `active` order.
    pub sigma: DMatrix<f64>,
    pub iteration: usize,
    /// Set when the measurements are identically zero.
    pub trivial: bool,
}

impl PosteriorState {
    /// Relative residual `||(b G + A) mu - b Phi^T r|| / ||b Phi^T r||`
    /// over the active set.
    pub fn posterior_residual(&self, problem: &BayesProblem) -> f64 {
        let k = self.active.len();
        if k == 0 {
            return 0.0;
        }
        let g = problem.gram_block(&self.active);
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, &i) in self.active.iter().enumerate() {
            let mut lhs = self.a[i] * self.mu[i];
            for (q, &j) in self.active.iter().enumerate() {
                lhs += self.b * g[(p, q)] * self.mu[j];
            }
            let rhs = self.b * problem.phi_t_r[i];
            num += (lhs - rhs) * (lhs - rhs);
            den += rhs * rhs;
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Posterior mean restricted to the active set, in `active` order.
    pub fn active_mean(&self) -> DVector<f64> {
        DVector::from_iterator(self.active.len(), self.active.iter().map(|&i| self.mu[i]))
    }

    fn trivial(n: usize, cfg: &BayesConfig) -> Self {
        Self {
            a: vec![cfg.a_prune; n],
            b: cfg.b_max,
            active: Vec::new(),
            mu: vec![0.0; n],
            sigma: DMatrix::zeros(0, 0),
            iteration: 0,
            trivial: true,
        }
    }
}

fn data_rule(cfg: &BayesConfig) -> bool {
    cfg.a0_rule == InitRule::FromData || cfg.b0_rule == InitRule::FromData
}

/// Upper bound on `b`: `b_max`, tightened by a known noise level.
fn b_cap(problem: &BayesProblem, cfg: &BayesConfig) -> f64 {
    match problem.noise_sigma {
        Some(sigma) if cfg.use_known_noise && sigma > 0.0 => cfg.b_max.min(1.0 / (sigma * sigma)),
        _ => cfg.b_max,
    }
}

fn initial_b(problem: &BayesProblem, cfg: &BayesConfig) -> f64 {
    let b0 = match cfg.b0_rule {
        InitRule::FromData => 1.0 / (0.01 * problem.measurement_power()),
        InitRule::Fixed(v) => v,
    };
    b0.min(b_cap(problem, cfg))
}

/// All-active initial state: uniform `a0`, data-derived or fixed `b0`,
/// posterior computed.
pub fn init_state(problem: &BayesProblem, cfg: &BayesConfig) -> Result<PosteriorState> {
    cfg.validate()?;
    let n = problem.n();
    let power = problem.measurement_power();
    if power == 0.0 && data_rule(cfg) {
        return Ok(PosteriorState::trivial(n, cfg));
    }
    let a0 = match cfg.a0_rule {
        InitRule::FromData => 1.0 / power,
        InitRule::Fixed(v) => v,
    };
    problem.gram();
    let mut state = PosteriorState {
        a: vec![a0; n],
        b: initial_b(problem, cfg),
        active: (0..n).collect(),
        mu: vec![0.0; n],
        sigma: DMatrix::zeros(0, 0),
        iteration: 0,
        trivial: false,
    };
    update_posterior(&mut state, problem)?;
    Ok(state)
}

/// Empty-model initial state for the sequential algorithm.
pub fn init_sequential(problem: &BayesProblem, cfg: &BayesConfig) -> Result<PosteriorState> {
    cfg.validate()?;
    let n = problem.n();
    if problem.measurement_power() == 0.0 && data_rule(cfg) {
        return Ok(PosteriorState::trivial(n, cfg));
    }
    Ok(PosteriorState {
        a: vec![cfg.a_prune; n],
        b: initial_b(problem, cfg),
        active: Vec::new(),
        mu: vec![0.0; n],
        sigma: DMatrix::zeros(0, 0),
        iteration: 0,
        trivial: false,
    })
}

/// Recomputes `sigma` and `mu` over the active set for the current `(a, b)`.
///
/// The system is Jacobi-scaled before factorization; prior precisions span
/// many orders of magnitude near convergence.
pub fn update_posterior(state: &mut PosteriorState, problem: &BayesProblem) -> Result<()> {
    let k = state.active.len();
    state.mu.iter_mut().for_each(|v| *v = 0.0);
    if k == 0 {
        state.sigma = DMatrix::zeros(0, 0);
        return Ok(());
    }
    let active = &state.active;
    let b = state.b;
    let mut scaled = problem.gram_block(active) * b;
    for (p, &i) in active.iter().enumerate() {
        scaled[(p, p)] += state.a[i];
    }
    if (0..k).any(|p| !(scaled[(p, p)] > 0.0 && scaled[(p, p)].is_finite())) {
        return Err(CsError::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    let d: Vec<f64> = (0..k).map(|p| 1.0 / scaled[(p, p)].sqrt()).collect();
    for q in 0..k {
        for p in 0..k {
            scaled[(p, q)] *= d[p] * d[q];
        }
    }
    let chol = match Cholesky::new(scaled.clone()) {
        Some(c) => c,
        None => {
            return Err(CsError::IllConditioned {
                condition: condition_estimate(&scaled),
            })
        }
    };
    let rhs = DVector::from_fn(k, |p, _| b * problem.phi_t_r[active[p]] * d[p]);
    let y = chol.solve(&rhs);
    let mut sigma = chol.inverse();
    for q in 0..k {
        for p in 0..k {
            sigma[(p, q)] *= d[p] * d[q];
        }
    }
    for (p, &i) in active.iter().enumerate() {
        state.mu[i] = y[p] * d[p];
    }
    state.sigma = sigma;
    Ok(())
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `b = (M - sum gamma) / ||r - Phi mu||^2` over `idx`, capped by
/// [`b_cap`]. `None` when `sum gamma >= M` (no update).
fn noise_precision(
    problem: &BayesProblem,
    state: &PosteriorState,
    idx: &[usize],
    gamma_sum: f64,
    cfg: &BayesConfig,
) -> Option<f64> {
    let dof = problem.m() as f64 - gamma_sum;
    if dof <= 0.0 {
        return None;
    }
    let residual = problem.residual_norm2(&state.mu, idx);
    let cap = b_cap(problem, cfg);
    Some(if residual > 0.0 { (dof / residual).min(cap) } else { cap })
}

/// Summary of one hyperparameter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperStep {
    /// Maximum relative change of `a` over the coefficients that stay active.
    pub max_rel_change: f64,
    pub pruned: usize,
}

/// One simultaneous evidence-maximization update of `a` (and `b` when
/// `cfg.learn_noise`) over the whole active set, pruning coefficients whose
/// precision passes `a_prune`. Leaves the posterior stale; call [`update_posterior`]
/// afterwards.
pub fn update_hyperparameters(state: &mut PosteriorState, problem: &BayesProblem, cfg: &BayesConfig) -> HyperStep {
    let mut gamma_sum = 0.0;
    let mut max_rel_change: f64 = 0.0;
    let mut keep = Vec::with_capacity(state.active.len());
    for (p, &i) in state.active.iter().enumerate() {
        let a_old = state.a[i];
        let gamma = 1.0 - a_old * state.sigma[(p, p)];
        let mu2 = state.mu[i] * state.mu[i];
        let a_new = if gamma > 0.0 && mu2 > 0.0 {
            gamma / mu2
        } else {
            f64::INFINITY
        };
        if a_new.is_finite() && a_new <= cfg.a_prune {
            gamma_sum += gamma;
            max_rel_change = max_rel_change.max((a_new - a_old).abs() / a_old);
            state.a[i] = a_new;
            keep.push(i);
        } else {
            state.a[i] = if a_new.is_finite() { a_new } else { cfg.a_prune };
        }
    }
    let pruned = state.active.len() - keep.len();
    if cfg.learn_noise {
        if let Some(b) = noise_precision(problem, state, &keep, gamma_sum, cfg) {
            state.b = b;
        }
    }
    state.active = keep;
    HyperStep { max_rel_change, pruned }
}

/// Sparsity and quality factors of every coefficient. `big_*` are taken
/// against the current model; `s`, `q` leave the coefficient's own
/// contribution out.
#[derive(Debug, Clone)]
struct Factors {
    big_s: Vec<f64>,
    big_q: Vec<f64>,
    s: Vec<f64>,
    q: Vec<f64>,
}

fn factors(state: &PosteriorState, problem: &BayesProblem) -> Factors {
    let n = problem.n();
    let b = state.b;
    let mut big_s: Vec<f64> = problem.col_norms.iter().map(|g| b * g).collect();
    let mut big_q: Vec<f64> = problem.phi_t_r.iter().map(|v| b * v).collect();
    let k = state.active.len();
    if k > 0 {
        let cols: Vec<&DVector<f64>> = state.active.iter().map(|&j| problem.gram_col(j)).collect();
        let g = DMatrix::from_fn(k, n, |p, i| cols[p][i]);
        let t = &state.sigma * &g;
        let fit = g.tr_mul(&state.active_mean());
        for i in 0..n {
            big_s[i] -= b * b * g.column(i).dot(&t.column(i));
            big_q[i] -= b * fit[i];
        }
    }
    let mut s = big_s.clone();
    let mut q = big_q.clone();
    // In-model values through sigma directly; the subtraction above loses
    // all precision there once b is large.
    for (p, &i) in state.active.iter().enumerate() {
        let d = state.sigma[(p, p)];
        let a = state.a[i];
        s[i] = 1.0 / d - a;
        q[i] = state.mu[i] / d;
        big_s[i] = a - a * a * d;
        big_q[i] = a * state.mu[i];
    }
    Factors { big_s, big_q, s, q }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Add(usize, f64),
    Reestimate(usize, f64),
    Delete(usize),
}

/// Candidate moves of one sequential step.
struct Proposal {
    /// Move with the largest evidence gain, if any gains.
    best: Option<Action>,
    /// Some coefficient should enter or leave the model.
    structural: bool,
    /// Largest relative change of `a` among re-estimations.
    max_rel_change: f64,
}

fn propose(state: &PosteriorState, f: &Factors, cfg: &BayesConfig) -> Proposal {
    let n = f.s.len();
    let mut in_model = vec![false; n];
    for &i in &state.active {
        in_model[i] = true;
    }
    let mut best: Option<(f64, Action)> = None;
    let mut structural = false;
    let mut max_rel_change: f64 = 0.0;
    for (i, &in_model) in in_model.iter().enumerate() {
        let (s, q, big_s, big_q) = (f.s[i], f.q[i], f.big_s[i], f.big_q[i]);
        let theta = q * q - s;
        let a_new = if theta > 0.0 { s * s / theta } else { f64::INFINITY };
        let keep = a_new.is_finite() && a_new <= cfg.a_prune;
        let (action, gain) = if in_model {
            let a = state.a[i];
            if keep {
                max_rel_change = max_rel_change.max((a_new - a).abs() / a);
                let delta = 1.0 / a_new - 1.0 / a;
                let gain = if delta == 0.0 {
                    0.0
                } else {
                    big_q * big_q / (big_s + 1.0 / delta) - (1.0 + big_s * delta).ln()
                };
                (Action::Reestimate(i, a_new), gain)
            } else {
                structural = true;
                let gain = big_q * big_q / (big_s - a) - (1.0 - big_s / a).ln();
                (Action::Delete(i), gain)
            }
        } else if keep {
            structural = true;
            let ratio = big_q * big_q / big_s;
            (Action::Add(i, a_new), ratio - 1.0 - ratio.ln())
        } else {
            continue;
        };
        let gain = if gain.is_finite() { gain } else { f64::MAX };
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, action));
        }
    }
    Proposal {
        best: best.map(|(_, a)| a),
        structural,
        max_rel_change,
    }
}

/// One sequential step: applies `action` to the model and refreshes the
/// posterior.
fn apply(state: &mut PosteriorState, action: Action, cfg: &BayesConfig) {
    match action {
        Action::Add(i, a) => {
            let at = state.active.partition_point(|&j| j < i);
            state.active.insert(at, i);
            state.a[i] = a;
        }
        Action::Reestimate(i, a) => state.a[i] = a,
        Action::Delete(i) => {
            state.active.retain(|&j| j != i);
            state.a[i] = cfg.a_prune;
        }
    }
}

fn gamma_sum(state: &PosteriorState) -> f64 {
    state
        .active
        .iter()
        .enumerate()
        .map(|(p, &i)| 1.0 - state.a[i] * state.sigma[(p, p)])
        .sum()
}

/// Alternates hyperparameter and posterior updates until the relative change
/// of `a` drops below `cfg.tol` or `cfg.max_iter` is reached.
pub fn reconstruct_bayes(
    op: &SensingOperator,
    r: &MeasurementVector,
    cfg: &BayesConfig,
) -> Result<ReconstructionResult> {
    reconstruct_bayes_observed(op, r, cfg, |_, _| {})
}

/// Like [`reconstruct_bayes`], calling `observe` with the initial state and
/// after every iteration.
pub fn reconstruct_bayes_observed(
    op: &SensingOperator,
    r: &MeasurementVector,
    cfg: &BayesConfig,
    mut observe: impl FnMut(&PosteriorState, &BayesProblem),
) -> Result<ReconstructionResult> {
    let timer = Stopwatch::start(Section::Recovery);
    let problem = BayesProblem::new(op, r)?;
    let (state, converged) = match cfg.algorithm {
        BayesAlgorithm::Sequential | BayesAlgorithm::Hybrid => run_sequential(&problem, cfg, &mut observe)?,
        BayesAlgorithm::AllActive => run_all_active(&problem, cfg, &mut observe)?,
    };
    let recovery_time = timer.stop();
    Ok(ReconstructionResult::new(
        state.mu,
        cfg.support_tol,
        Some(1.0 / state.b),
        state.iteration,
        converged,
        recovery_time,
    ))
}

fn run_all_active(
    problem: &BayesProblem,
    cfg: &BayesConfig,
    observe: &mut impl FnMut(&PosteriorState, &BayesProblem),
) -> Result<(PosteriorState, bool)> {
    let mut state = init_state(problem, cfg)?;
    if state.trivial {
        return Ok((state, true));
    }
    observe(&state, problem);
    while state.iteration < cfg.max_iter {
        let step = update_hyperparameters(&mut state, problem, cfg);
        update_posterior(&mut state, problem)?;
        state.iteration += 1;
        observe(&state, problem);
        if state.active.is_empty() || (step.pruned == 0 && step.max_rel_change <= cfg.tol) {
            return Ok((state, true));
        }
    }
    Ok((state, false))
}

fn run_sequential(
    problem: &BayesProblem,
    cfg: &BayesConfig,
    observe: &mut impl FnMut(&PosteriorState, &BayesProblem),
) -> Result<(PosteriorState, bool)> {
    let warm = cfg.algorithm == BayesAlgorithm::Hybrid;
    let mut state = if warm {
        init_state(problem, cfg)?
    } else {
        init_sequential(problem, cfg)?
    };
    if state.trivial {
        return Ok((state, true));
    }
    observe(&state, problem);
    if warm {
        while state.iteration < cfg.max_iter {
            let step = update_hyperparameters(&mut state, problem, cfg);
            update_posterior(&mut state, problem)?;
            state.iteration += 1;
            observe(&state, problem);
            if state.active.is_empty() || (step.pruned == 0 && step.max_rel_change <= cfg.hybrid_switch) {
                break;
            }
        }
    }
    while state.iteration < cfg.max_iter {
        let f = factors(&state, problem);
        let prop = propose(&state, &f, cfg);
        match prop.best {
            Some(action @ (Action::Add(..) | Action::Delete(..))) => {
                apply(&mut state, action, cfg);
                update_posterior(&mut state, problem)?;
            }
            best if prop.structural || prop.max_rel_change > cfg.tol => {
                reestimate_all(&mut state, problem, &f, best)?;
            }
            _ => {
                let b_old = state.b;
                let b_new = if cfg.learn_noise {
                    noise_precision(problem, &state, &state.active, gamma_sum(&state), cfg).unwrap_or(b_old)
                } else {
                    b_old
                };
                if (b_new - b_old).abs() <= cfg.tol * b_old {
                    return Ok((state, true));
                }
                state.b = b_new;
                update_posterior(&mut state, problem)?;
            }
        }
        state.iteration += 1;
        observe(&state, problem);
    }
    Ok((state, false))
}

/// Joint re-estimation `a_i = s_i^2 / (q_i^2 - s_i)` of every active
/// coefficient whose optimum is finite. The full step is kept if the log
/// evidence does not drop, then a half step in `ln a`; failing both, only
/// the single move `fallback` is taken.
fn reestimate_all(
    state: &mut PosteriorState,
    problem: &BayesProblem,
    f: &Factors,
    fallback: Option<Action>,
) -> Result<()> {
    let before = log_evidence(state, problem);
    let saved = state.clone();
    let targets: Vec<(usize, f64)> = state
        .active
        .iter()
        .filter_map(|&i| {
            let theta = f.q[i] * f.q[i] - f.s[i];
            (theta > 0.0).then(|| (i, f.s[i] * f.s[i] / theta))
        })
        .collect();
    for fraction in [1.0, 0.5] {
        for &(i, a) in &targets {
            state.a[i] = saved.a[i] * (a / saved.a[i]).powf(fraction);
        }
        if update_posterior(state, problem).is_ok() && log_evidence(state, problem) >= before {
            return Ok(());
        }
        *state = saved.clone();
    }
    if let Some(Action::Reestimate(i, a)) = fallback {
        state.a[i] = a;
    }
    update_posterior(state, problem)
}

/// Log marginal likelihood of `r` under the current `(a, b)`, from the
/// posterior over the active set.
pub fn log_evidence(state: &PosteriorState, problem: &BayesProblem) -> f64 {
    let m = problem.m() as f64;
    let mut fit = state.b * problem.residual_norm2(&state.mu, &state.active);
    let mut log_a = 0.0;
    for &i in &state.active {
        fit += state.a[i] * state.mu[i] * state.mu[i];
        log_a += state.a[i].ln();
    }
    let log_det_sigma = if state.active.is_empty() {
        0.0
    } else {
        match Cholesky::new(state.sigma.clone()) {
            Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => return f64::NEG_INFINITY,
        }
    };
    -0.5 * (m * (2.0 * std::f64::consts::PI).ln() - m * state.b.ln() - log_a - log_det_sigma + fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{
        build_circulant, build_circulant_scaled, make_seed, EntryDistribution, RowSelect, SeedVector,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn identity_op(n: usize) -> SensingOperator {
        let mut c = vec![0.0; n];
        c[0] = 1.0;
        build_circulant_scaled(
            SeedVector::new(c, EntryDistribution::Gaussian).unwrap(),
            n,
            RowSelect::FirstM,
            1.0,
        )
        .unwrap()
    }

    fn fixed_cfg(a0: f64, b0: f64) -> BayesConfig {
        BayesConfig {
            a0_rule: InitRule::Fixed(a0),
            b0_rule: InitRule::Fixed(b0),
            ..BayesConfig::default()
        }
    }

    fn random_problem(seed: u64, n: usize, m: usize) -> BayesProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = make_seed(&mut rng, n, EntryDistribution::Gaussian).unwrap();
        let op = build_circulant(c, m, RowSelect::Random(&mut rng)).unwrap();
        let r: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        BayesProblem::new(&op, &MeasurementVector::new(r, None).unwrap()).unwrap()
    }

    #[test]
    fn zero_measurements_give_trivial_state() {
        let op = identity_op(4);
        let r = MeasurementVector::new(vec![0.0; 4], None).unwrap();
        let p = BayesProblem::new(&op, &r).unwrap();
        let s = init_state(&p, &BayesConfig::default()).unwrap();
        assert!(s.trivial);
        assert!(s.mu.iter().all(|&v| v == 0.0));
        let res = reconstruct_bayes(&op, &r, &BayesConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert!(res.estimate.iter().all(|&v| v == 0.0));

        // Fixed rules still evaluate the posterior, which is zero for r = 0.
        let s = init_state(&p, &fixed_cfg(1.0, 1.0)).unwrap();
        assert!(!s.trivial);
        assert!(s.mu.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_closed_form() {
        let op = identity_op(4);
        let r = MeasurementVector::new(vec![1.0, -2.0, 0.5, 4.0], None).unwrap();
        let p = BayesProblem::new(&op, &r).unwrap();
        let s = init_state(&p, &fixed_cfg(1.0, 1.0)).unwrap();
        for i in 0..4 {
            assert!((s.mu[i] - r.values()[i] / 2.0).abs() < 1e-15);
            for j in 0..4 {
                let expect = if i == j { 0.5 } else { 0.0 };
                assert!((s.sigma[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn huge_precision_suppresses_coefficient() {
        let op = identity_op(4);
        let r = MeasurementVector::new(vec![1.0, -2.0, 0.5, 4.0], None).unwrap();
        let p = BayesProblem::new(&op, &r).unwrap();
        let mut s = init_state(&p, &fixed_cfg(1.0, 1.0)).unwrap();
        s.a[2] = 1e12;
        update_posterior(&mut s, &p).unwrap();
        let rn = r.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(s.mu[2].abs() <= 1e-6 * rn);
        assert!((s.mu[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_dense_inverse() {
        let p = random_problem(17, 12, 8);
        let mut s = init_state(&p, &fixed_cfg(0.7, 3.0)).unwrap();
        for (i, a) in s.a.iter_mut().enumerate() {
            *a = 0.2 + i as f64 * 0.3;
        }
        update_posterior(&mut s, &p).unwrap();
        // Independent oracle: unscaled dense inverse through LU.
        let mut k = p.gram() * s.b;
        for i in 0..12 {
            k[(i, i)] += s.a[i];
        }
        let inv = k.clone().lu().try_inverse().unwrap();
        let mu = &inv * (p.phi_t_r() * s.b);
        assert!((&s.sigma - &inv).norm() <= 1e-8 * inv.norm());
        let got = DVector::from_vec(s.mu.clone());
        assert!((&got - &mu).norm() <= 1e-8 * mu.norm());
    }

    #[test]
    fn posterior_residual_after_init() {
        let p = random_problem(23, 20, 10);
        let s = init_state(&p, &BayesConfig::default()).unwrap();
        assert!(s.posterior_residual(&p) <= 1e-8);
    }

    #[test]
    fn mean_scales_with_measurements() {
        let p = random_problem(29, 16, 10);
        let s = init_state(&p, &fixed_cfg(1.3, 2.0)).unwrap();
        let alpha = -3.25;
        let ps = p.scaled(alpha);
        let s2 = init_state(&ps, &fixed_cfg(1.3, 2.0)).unwrap();
        for i in 0..16 {
            assert!((s2.mu[i] - alpha * s.mu[i]).abs() <= 1e-12 * (1.0 + s.mu[i].abs()));
        }
    }

    #[test]
    fn exact_fit_caps_noise_precision() {
        // Identity operator with all coefficients active fits r exactly in
        // the limit; the b update must saturate at b_max rather than blow up.
        let op = identity_op(3);
        let r = MeasurementVector::new(vec![1.0, 2.0, 3.0], None).unwrap();
        let p = BayesProblem::new(&op, &r).unwrap();
        let cfg = fixed_cfg(1e-12, 1.0);
        let mut s = init_state(&p, &cfg).unwrap();
        // Overwrite mu with the exact fit so the residual is zero.
        s.mu = vec![1.0, 2.0, 3.0];
        let _ = update_hyperparameters(&mut s, &p, &cfg);
        assert_eq!(s.b, cfg.b_max);
    }

    #[test]
    fn zero_gamma_prunes() {
        let op = identity_op(3);
        let r = MeasurementVector::new(vec![1.0, 2.0, 3.0], None).unwrap();
        let p = BayesProblem::new(&op, &r).unwrap();
        let cfg = fixed_cfg(1.0, 1.0);
        let mut s = init_state(&p, &cfg).unwrap();
        // gamma_1 = 1 - a_1 sigma_11 = 0 when sigma_11 = 1 / a_1.
        s.sigma[(1, 1)] = 1.0 / s.a[1];
        let step = update_hyperparameters(&mut s, &p, &cfg);
        assert_eq!(step.pruned, 1);
        assert_eq!(s.active, vec![0, 2]);
        assert!(s.a[1] >= cfg.a_prune);

        // mu_i = 0 with gamma_i > 0 prunes instead of dividing by zero.
        let mut s = init_state(&p, &cfg).unwrap();
        s.mu[0] = 0.0;
        let step = update_hyperparameters(&mut s, &p, &cfg);
        assert_eq!(step.pruned, 1);
        assert_eq!(s.a[0], cfg.a_prune);
    }

    #[test]
    fn identity_noiseless_recovers_input() {
        let op = identity_op(8);
        let vals = vec![0.0, 1.5, 0.0, -2.0, 0.0, 0.0, 0.7, 0.0];
        let r = MeasurementVector::new(vals.clone(), Some(0.0)).unwrap();
        let res = reconstruct_bayes(&op, &r, &BayesConfig::default()).unwrap();
        let err: f64 = res
            .estimate
            .iter()
            .zip(&vals)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-6 * norm, "relative error {}", err / norm);
    }

    #[test]
    fn noiseless_noise_variance_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = make_seed(&mut rng, 20, EntryDistribution::Gaussian).unwrap();
        let op = build_circulant(c, 12, RowSelect::Random(&mut rng)).unwrap();
        let mut x = vec![0.0; 20];
        x[3] = 1.0;
        x[14] = -1.0;
        let r = MeasurementVector::new(op.apply(&x).unwrap(), Some(0.0)).unwrap();
        let res = reconstruct_bayes(&op, &r, &BayesConfig::default()).unwrap();
        assert!(res.estimated_noise_variance.unwrap() <= 1e-6);
        assert_eq!(res.support_size, 2);
    }

    #[test]
    fn active_set_never_grows() {
        let p = random_problem(37, 24, 12);
        let cfg = BayesConfig::default();
        let mut s = init_state(&p, &cfg).unwrap();
        let mut last = s.active.clone();
        for _ in 0..50 {
            update_hyperparameters(&mut s, &p, &cfg);
            update_posterior(&mut s, &p).unwrap();
            assert!(s.active.iter().all(|i| last.contains(i)));
            last = s.active.clone();
        }
    }

    #[test]
    fn singular_system_reports_condition() {
        // A zero prior precision on an unmeasured coordinate makes b G + A
        // singular.
        let mut c = vec![0.0; 4];
        c[0] = 1.0;
        let op = build_circulant_scaled(
            SeedVector::new(c, EntryDistribution::Gaussian).unwrap(),
            2,
            RowSelect::FirstM,
            1.0,
        )
        .unwrap();
        let r = MeasurementVector::new(vec![1.0, 1.0], None).unwrap();
        let p = BayesProblem::new(&op, &r).unwrap();
        let mut s = init_state(&p, &fixed_cfg(1.0, 1.0)).unwrap();
        s.a[3] = 0.0;
        match update_posterior(&mut s, &p) {
            Err(CsError::IllConditioned { condition }) => assert!(condition > 1e12),
            other => panic!("expected ill-conditioned error, got {other:?}"),
        }
    }

    /// `C = I / b + Phi_S A_S^-1 Phi_S^T`, the marginal covariance of `r`.
    fn marginal_cov(p: &BayesProblem, s: &PosteriorState) -> DMatrix<f64> {
        let m = p.m();
        let mut c = DMatrix::identity(m, m) / s.b;
        for &i in &s.active {
            let col = p.phi().column(i);
            c += (col * col.transpose()) / s.a[i];
        }
        c
    }

    fn sequential_state(p: &BayesProblem, active: &[usize], b: f64) -> PosteriorState {
        let n = p.n();
        let mut a = vec![1e12; n];
        for (t, &i) in active.iter().enumerate() {
            a[i] = 0.5 + 0.75 * t as f64;
        }
        let mut s = PosteriorState {
            a,
            b,
            active: active.to_vec(),
            mu: vec![0.0; n],
            sigma: DMatrix::zeros(0, 0),
            iteration: 0,
            trivial: false,
        };
        update_posterior(&mut s, p).unwrap();
        s
    }

    #[test]
    fn factors_match_marginal_covariance() {
        let p = random_problem(41, 16, 10);
        let s = sequential_state(&p, &[1, 4, 9, 13], 2.5);
        let f = factors(&s, &p);
        let cinv = marginal_cov(&p, &s).lu().try_inverse().unwrap();
        for i in 0..16 {
            let phi = p.phi().column(i).into_owned();
            let big_s = (phi.transpose() * &cinv * &phi)[(0, 0)];
            let big_q = (phi.transpose() * &cinv * p.measurements())[(0, 0)];
            assert!((f.big_s[i] - big_s).abs() <= 1e-9 * big_s.abs().max(1.0), "S_{i}");
            assert!((f.big_q[i] - big_q).abs() <= 1e-9 * big_q.abs().max(1.0), "Q_{i}");
            if s.active.contains(&i) {
                // Leave-one-out values: the same factors with i removed.
                let rest: Vec<usize> = s.active.iter().copied().filter(|&j| j != i).collect();
                let mut without = s.clone();
                without.active = rest;
                update_posterior(&mut without, &p).unwrap();
                let loo = factors(&without, &p);
                assert!((f.s[i] - loo.big_s[i]).abs() <= 1e-8 * loo.big_s[i].abs(), "s_{i}");
                assert!(
                    (f.q[i] - loo.big_q[i]).abs() <= 1e-8 * loo.big_q[i].abs().max(1.0),
                    "q_{i}"
                );
            } else {
                assert_eq!(f.s[i], f.big_s[i]);
                assert_eq!(f.q[i], f.big_q[i]);
            }
        }
    }

    #[test]
    fn log_evidence_matches_gaussian_density() {
        let p = random_problem(43, 14, 9);
        for active in [vec![], vec![2], vec![0, 5, 7, 11]] {
            let s = sequential_state(&p, &active, 1.7);
            let c = marginal_cov(&p, &s);
            let chol = Cholesky::new(c.clone()).unwrap();
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let r = p.measurements();
            let quad = r.dot(&chol.solve(r));
            let m = p.m() as f64;
            let expect = -0.5 * (m * (2.0 * std::f64::consts::PI).ln() + log_det + quad);
            let got = log_evidence(&s, &p);
            assert!((got - expect).abs() <= 1e-9 * expect.abs(), "{got} vs {expect}");
        }
    }

    #[test]
    fn sequential_evidence_never_decreases() {
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let c = make_seed(&mut rng, 40, EntryDistribution::Gaussian).unwrap();
            let op = build_circulant(c, 20, RowSelect::Random(&mut rng)).unwrap();
            let mut x = vec![0.0; 40];
            for i in [3, 17, 29] {
                x[i] = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            let clean = op.apply(&x).unwrap();
            let r: Vec<f64> = clean
                .iter()
                .map(|v| {
                    v + 0.05 * {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        e
                    }
                })
                .collect();
            let r = MeasurementVector::new(r, None).unwrap();
            let cfg = BayesConfig {
                algorithm: BayesAlgorithm::Sequential,
                ..BayesConfig::default()
            };
            let mut last = f64::NEG_INFINITY;
            reconstruct_bayes_observed(&op, &r, &cfg, |st, p| {
                let ev = log_evidence(st, p);
                assert!(
                    ev >= last - 1e-9 * last.abs(),
                    "seed {seed} iteration {}: {ev} < {last}",
                    st.iteration
                );
                last = ev;
            })
            .unwrap();
        }
    }

    #[test]
    fn known_noise_caps_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let c = make_seed(&mut rng, 60, EntryDistribution::Gaussian).unwrap();
        let op = build_circulant(c, 30, RowSelect::Random(&mut rng)).unwrap();
        let mut x = vec![0.0; 60];
        x[5] = 1.0;
        x[40] = -1.0;
        let sigma = 0.1;
        let r: Vec<f64> = op
            .apply(&x)
            .unwrap()
            .iter()
            .map(|v| {
                v + sigma * {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e
                }
            })
            .collect();
        let res = reconstruct_bayes(
            &op,
            &MeasurementVector::new(r, Some(sigma)).unwrap(),
            &BayesConfig::default(),
        )
        .unwrap();
        assert!(res.estimated_noise_variance.unwrap() >= sigma * sigma * (1.0 - 1e-12));
    }

    #[test]
    fn all_active_schedule_recovers_sparse_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let c = make_seed(&mut rng, 30, EntryDistribution::Gaussian).unwrap();
        let op = build_circulant(c, 16, RowSelect::Random(&mut rng)).unwrap();
        let mut x = vec![0.0; 30];
        x[2] = 1.0;
        x[21] = -1.0;
        let r = MeasurementVector::new(op.apply(&x).unwrap(), Some(0.0)).unwrap();
        let cfg = BayesConfig {
            algorithm: BayesAlgorithm::AllActive,
            ..BayesConfig::default()
        };
        let res = reconstruct_bayes(&op, &r, &cfg).unwrap();
        assert!(res.converged);
        let err: f64 = res
            .estimate
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-6 * 2f64.sqrt());
    }
}

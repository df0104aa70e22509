//! C ABI for `cs-core`.
//!
//! Operators are opaque handles created by `cs_operator_*` constructors and
//! released with `cs_operator_free`. Every fallible function returns a
//! status code (`CS_OK` on success); the message of the last failure on the
//! calling thread is available through `cs_last_error_message`.
//!
//! Array arguments are `(pointer, length)` pairs and lengths are checked
//! against the operator dimensions. Solver configs are optional JSON
//! strings in the same shape as the `bayes` / `bp` tables of the benchmark
//! config; pass NULL for defaults.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cs_core::bayes::{reconstruct_bayes, BayesConfig};
use cs_core::bp::{reconstruct_bp, BpConfig};
use cs_core::sensing::{build_circulant, build_dense_random, make_seed, RowSelect, SeedVector};
use cs_core::{
    metrics, CsError, EntryDistribution, MeasurementVector, ReconstructionResult, SensingOperator, SparseSignal,
};

pub const CS_OK: i32 = 0;
pub const CS_ERR_INVALID_DIMENSION: i32 = 1;
pub const CS_ERR_INVALID_SPARSITY: i32 = 2;
pub const CS_ERR_INVALID_PARAMETER: i32 = 3;
pub const CS_ERR_RESOURCE_LIMIT: i32 = 4;
pub const CS_ERR_ILL_CONDITIONED: i32 = 5;
pub const CS_ERR_DIVERGED: i32 = 6;
pub const CS_ERR_UNDEFINED_METRIC: i32 = 7;
pub const CS_ERR_INVALID_CONFIG: i32 = 8;
pub const CS_ERR_IO: i32 = 9;
pub const CS_ERR_NULL_POINTER: i32 = 100;
pub const CS_ERR_PANIC: i32 = 101;

/// Entry law for random seeds and dense matrices.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsDistribution {
    CsGaussian = 0,
    CsBernoulli = 1,
}

impl From<CsDistribution> for EntryDistribution {
    fn from(d: CsDistribution) -> Self {
        match d {
            CsDistribution::CsGaussian => EntryDistribution::Gaussian,
            CsDistribution::CsBernoulli => EntryDistribution::Bernoulli,
        }
    }
}

/// Opaque measurement operator.
pub struct CsOperator {
    inner: SensingOperator,
}

/// Scalar outputs of a reconstruction.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CsReconInfo {
    /// NaN when the solver does not estimate it.
    pub noise_variance: f64,
    pub support_size: usize,
    pub raw_support_size: usize,
    pub iterations: usize,
    /// 1 when the stopping rule was met before the iteration cap.
    pub converged: i32,
    pub recovery_time_s: f64,
}

impl From<&ReconstructionResult> for CsReconInfo {
    fn from(r: &ReconstructionResult) -> Self {
        Self {
            noise_variance: r.estimated_noise_variance.unwrap_or(f64::NAN),
            support_size: r.support_size,
            raw_support_size: r.raw_support_size,
            iterations: r.iterations,
            converged: i32::from(r.converged),
            recovery_time_s: r.recovery_time,
        }
    }
}

enum Failure {
    Core(CsError),
    Null(&'static str),
}

impl From<CsError> for Failure {
    fn from(e: CsError) -> Self {
        Failure::Core(e)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            CS_OK
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            e.code()
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            CS_ERR_NULL_POINTER
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            CS_ERR_PANIC
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn operator<'a>(op: *const CsOperator) -> Result<&'a SensingOperator, Failure> {
    op.as_ref().map(|o| &o.inner).ok_or(Failure::Null("operator"))
}

unsafe fn emit_operator(out: *mut *mut CsOperator, op: SensingOperator) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(CsOperator { inner: op }));
    Ok(())
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got != want {
        return Err(CsError::InvalidDimension(format!("{what} length {got} != {want}")).into());
    }
    Ok(())
}

unsafe fn config<T: Default + serde::de::DeserializeOwned>(json: *const c_char) -> Result<T, Failure> {
    if json.is_null() {
        return Ok(T::default());
    }
    let text = CStr::from_ptr(json)
        .to_str()
        .map_err(|e| CsError::InvalidConfig(format!("config is not UTF-8: {e}")))?;
    serde_json::from_str(text).map_err(|e| CsError::InvalidConfig(e.to_string()).into())
}

fn measurements(r: &[f64], noise_sigma: f64) -> Result<MeasurementVector, Failure> {
    let sigma = (!noise_sigma.is_nan()).then_some(noise_sigma);
    Ok(MeasurementVector::new(r.to_vec(), sigma)?)
}

/// Copies the message of the last failure on this thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length
/// excluding the terminator; call with `len = 0` to size the buffer.
///
/// # Safety
/// `buf` must point to `len` writable bytes when `len > 0`.
#[no_mangle]
pub unsafe extern "C" fn cs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Partial circulant operator from an explicit seed vector `c` (length
/// `n`) and strictly increasing row indices (length `m`). Entry `(i, j)` is
/// `scale * c[(j - rows[i]) mod n]`; pass `scale <= 0` for `1/sqrt(m)`.
///
/// # Safety
/// `c` and `rows` must point to `n` and `m` readable elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_circulant(
    c: *const f64,
    n: usize,
    rows: *const usize,
    m: usize,
    scale: f64,
    out: *mut *mut CsOperator,
) -> i32 {
    guard(|| {
        let c = slice(c, n, "c")?;
        let rows = slice(rows, m, "rows")?;
        let seed = SeedVector::new(c.to_vec(), EntryDistribution::Gaussian)?;
        let scale = if scale > 0.0 {
            scale
        } else {
            1.0 / (m.max(1) as f64).sqrt()
        };
        emit_operator(out, SensingOperator::partial_circulant(seed, rows.to_vec(), scale)?)
    })
}

/// Random partial circulant operator: seed entries drawn from `dist`, `m`
/// rows chosen uniformly without replacement, scale `1/sqrt(m)`. The same
/// `rng_seed` always gives the same operator.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_circulant_random(
    n: usize,
    m: usize,
    dist: CsDistribution,
    rng_seed: u64,
    out: *mut *mut CsOperator,
) -> i32 {
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let seed = make_seed(&mut rng, n, dist.into())?;
        let op = build_circulant(seed, m, RowSelect::Random(&mut rng))?;
        emit_operator(out, op.with_rng_seed(rng_seed))
    })
}

/// Random dense `m x n` operator with i.i.d. entries from `dist`, scaled by
/// `1/sqrt(m)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_dense_random(
    m: usize,
    n: usize,
    dist: CsDistribution,
    rng_seed: u64,
    out: *mut *mut CsOperator,
) -> i32 {
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let op = build_dense_random(&mut rng, m, n, dist.into())?;
        emit_operator(out, op.with_rng_seed(rng_seed))
    })
}

/// Releases an operator. NULL is ignored.
///
/// # Safety
/// `op` must come from a `cs_operator_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_free(op: *mut CsOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Number of measurements (rows); 0 for NULL.
///
/// # Safety
/// `op` must be NULL or a live operator.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_m(op: *const CsOperator) -> usize {
    op.as_ref().map_or(0, |o| o.inner.m())
}

/// Signal length (columns); 0 for NULL.
///
/// # Safety
/// `op` must be NULL or a live operator.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_n(op: *const CsOperator) -> usize {
    op.as_ref().map_or(0, |o| o.inner.n())
}

/// `y = Phi x`.
///
/// # Safety
/// `x` must hold `x_len` readable and `y` `y_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_apply(
    op: *const CsOperator,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_len: usize,
) -> i32 {
    guard(|| {
        let op = operator(op)?;
        check_len(y_len, op.m(), "output")?;
        let v = op.apply(slice(x, x_len, "x")?)?;
        slice_mut(y, y_len, "y")?.copy_from_slice(&v);
        Ok(())
    })
}

/// `x = Phi^T y`.
///
/// # Safety
/// `y` must hold `y_len` readable and `x` `x_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_adjoint(
    op: *const CsOperator,
    y: *const f64,
    y_len: usize,
    x: *mut f64,
    x_len: usize,
) -> i32 {
    guard(|| {
        let op = operator(op)?;
        check_len(x_len, op.n(), "output")?;
        let v = op.adjoint_apply(slice(y, y_len, "y")?)?;
        slice_mut(x, x_len, "x")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Writes the operator as a row-major `m x n` matrix into `out`.
///
/// # Safety
/// `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_operator_to_dense(op: *const CsOperator, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let op = operator(op)?;
        check_len(len, op.m() * op.n(), "output")?;
        let dense = op.to_dense()?;
        let out = slice_mut(out, len, "out")?;
        for i in 0..op.m() {
            for j in 0..op.n() {
                out[i * op.n() + j] = dense[(i, j)];
            }
        }
        Ok(())
    })
}

type Solver<C> = fn(&SensingOperator, &MeasurementVector, &C) -> cs_core::Result<ReconstructionResult>;

#[allow(clippy::too_many_arguments)]
unsafe fn reconstruct<C: Default + serde::de::DeserializeOwned>(
    solve: Solver<C>,
    op: *const CsOperator,
    r: *const f64,
    r_len: usize,
    noise_sigma: f64,
    config_json: *const c_char,
    estimate: *mut f64,
    estimate_len: usize,
    info: *mut CsReconInfo,
) -> i32 {
    guard(|| {
        let op = operator(op)?;
        check_len(estimate_len, op.n(), "estimate")?;
        let cfg: C = config(config_json)?;
        let r = measurements(slice(r, r_len, "r")?, noise_sigma)?;
        let res = solve(op, &r, &cfg)?;
        slice_mut(estimate, estimate_len, "estimate")?.copy_from_slice(&res.estimate);
        if let Some(info) = info.as_mut() {
            *info = CsReconInfo::from(&res);
        }
        Ok(())
    })
}

/// Sparse Bayesian reconstruction. `noise_sigma` is the known measurement
/// noise level, or NaN when unknown. `info` may be NULL.
///
/// # Safety
/// Pointers must be valid for the given lengths; `config_json` must be NULL
/// or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cs_reconstruct_bayes(
    op: *const CsOperator,
    r: *const f64,
    r_len: usize,
    noise_sigma: f64,
    config_json: *const c_char,
    estimate: *mut f64,
    estimate_len: usize,
    info: *mut CsReconInfo,
) -> i32 {
    reconstruct::<BayesConfig>(
        reconstruct_bayes,
        op,
        r,
        r_len,
        noise_sigma,
        config_json,
        estimate,
        estimate_len,
        info,
    )
}

/// L1-regularized least squares. Arguments as for `cs_reconstruct_bayes`.
///
/// # Safety
/// As for `cs_reconstruct_bayes`.
#[no_mangle]
pub unsafe extern "C" fn cs_reconstruct_bp(
    op: *const CsOperator,
    r: *const f64,
    r_len: usize,
    noise_sigma: f64,
    config_json: *const c_char,
    estimate: *mut f64,
    estimate_len: usize,
    info: *mut CsReconInfo,
) -> i32 {
    reconstruct::<BpConfig>(
        reconstruct_bp,
        op,
        r,
        r_len,
        noise_sigma,
        config_json,
        estimate,
        estimate_len,
        info,
    )
}

unsafe fn metric(
    s: *const f64,
    s_hat: *const f64,
    n: usize,
    out: *mut f64,
    f: impl FnOnce(&SparseSignal, &[f64]) -> cs_core::Result<f64>,
) -> i32 {
    guard(|| {
        let signal = SparseSignal::from_values(slice(s, n, "s")?.to_vec());
        let v = f(&signal, slice(s_hat, n, "s_hat")?)?;
        *out.as_mut().ok_or(Failure::Null("out"))? = v;
        Ok(())
    })
}

/// `||s_hat - s|| / ||s||`.
///
/// # Safety
/// `s` and `s_hat` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_reconstruction_error(s: *const f64, s_hat: *const f64, n: usize, out: *mut f64) -> i32 {
    metric(s, s_hat, n, out, metrics::reconstruction_error)
}

/// Mean of the squared differences.
///
/// # Safety
/// As for `cs_reconstruction_error`.
#[no_mangle]
pub unsafe extern "C" fn cs_mean_square_error(s: *const f64, s_hat: *const f64, n: usize, out: *mut f64) -> i32 {
    metric(s, s_hat, n, out, metrics::mean_square_error)
}

/// Pearson correlation. Returns `CS_ERR_UNDEFINED_METRIC` when either
/// input is constant.
///
/// # Safety
/// As for `cs_reconstruction_error`.
#[no_mangle]
pub unsafe extern "C" fn cs_correlation(s: *const f64, s_hat: *const f64, n: usize, out: *mut f64) -> i32 {
    metric(s, s_hat, n, out, |s, h| {
        metrics::correlation(s, h)?.ok_or_else(|| CsError::UndefinedMetric("constant input".into()))
    })
}

//! Sensing operators: partial circulant and dense random measurement maps.
//!
//! A partial circulant operator keeps only its seed vector and the selected
//! row indices. Entry `(i, j)` of the implied matrix is `c[(j - i) mod n]`,
//! scaled by `1/sqrt(m)`. Forward and adjoint application go through an FFT
//! circular convolution; [`SensingOperator::to_dense`] is the reference path.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::signals::{MeasurementVector, SparseSignal};

/// Largest `m * n` that [`SensingOperator::to_dense`] will materialize.
pub const DENSE_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntryDistribution {
    /// Standard normal entries.
    #[default]
    Gaussian,
    /// Equiprobable +1 / -1 entries.
    Bernoulli,
}

impl EntryDistribution {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            EntryDistribution::Gaussian => StandardNormal.sample(rng),
            EntryDistribution::Bernoulli => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Generating vector `c = (c_0, ..., c_{n-1})` of a circulant matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedVector {
    entries: Vec<f64>,
    distribution: EntryDistribution,
}

impl SeedVector {
    pub fn new(entries: Vec<f64>, distribution: EntryDistribution) -> Result<Self> {
        if entries.is_empty() {
            return Err(CsError::InvalidDimension("seed vector must have length >= 1".into()));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(CsError::InvalidParameter(format!("seed entry {pos} is not finite")));
        }
        Ok(Self { entries, distribution })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn distribution(&self) -> EntryDistribution {
        self.distribution
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Draws `n` i.i.d. seed entries from `dist`.
pub fn make_seed<R: Rng + ?Sized>(rng: &mut R, n: usize, dist: EntryDistribution) -> Result<SeedVector> {
    if n == 0 {
        return Err(CsError::InvalidDimension("seed length n must be >= 1".into()));
    }
    let entries = (0..n).map(|_| dist.draw(rng)).collect();
    SeedVector::new(entries, dist)
}

/// Which rows of the full circulant matrix a partial operator keeps.
pub enum RowSelect<'a> {
    FirstM,
    Random(&'a mut dyn RngCore),
}

impl fmt::Debug for RowSelect<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowSelect::FirstM => f.write_str("FirstM"),
            RowSelect::Random(_) => f.write_str("Random(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKindTag {
    PartialCirculant,
    DenseRandom,
}

#[derive(Debug, Clone)]
pub enum OperatorKind {
    PartialCirculant {
        seed: SeedVector,
        rows: Vec<usize>,
    },
    /// Unscaled draws; the operator's `scale` is applied on output.
    DenseRandom {
        matrix: DMatrix<f64>,
    },
}

/// Precomputed transform data for the circulant fast path.
#[derive(Clone)]
struct CirculantFft {
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl CirculantFft {
    fn new(seed: &[f64]) -> Self {
        let n = seed.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut spectrum: Vec<Complex<f64>> = seed.iter().map(|&v| Complex::new(v, 0.0)).collect();
        forward.process(&mut spectrum);
        Self {
            spectrum,
            forward,
            inverse,
        }
    }

    /// Circular convolution of the seed with `buf` (in place), optionally
    /// with the conjugated spectrum, which turns it into a correlation.
    fn convolve(&self, buf: &mut [Complex<f64>], conjugate: bool) {
        let n = buf.len() as f64;
        self.forward.process(buf);
        for (v, c) in buf.iter_mut().zip(&self.spectrum) {
            *v *= if conjugate { c.conj() } else { *c };
        }
        self.inverse.process(buf);
        for v in buf.iter_mut() {
            *v /= n;
        }
    }
}

/// An `m x n` linear measurement map with forward and adjoint application.
#[derive(Clone)]
pub struct SensingOperator {
    kind: OperatorKind,
    m: usize,
    n: usize,
    scale: f64,
    rng_seed: Option<u64>,
    fft: Option<CirculantFft>,
}

impl fmt::Debug for SensingOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SensingOperator")
            .field("kind", &self.kind_tag())
            .field("m", &self.m)
            .field("n", &self.n)
            .field("scale", &self.scale)
            .field("rng_seed", &self.rng_seed)
            .finish()
    }
}

/// Builds a partial circulant operator with the default `1/sqrt(m)` scale.
pub fn build_circulant(seed: SeedVector, m: usize, row_select: RowSelect<'_>) -> Result<SensingOperator> {
    let scale = if m > 0 { 1.0 / (m as f64).sqrt() } else { 1.0 };
    build_circulant_scaled(seed, m, row_select, scale)
}

pub fn build_circulant_scaled(
    seed: SeedVector,
    m: usize,
    row_select: RowSelect<'_>,
    scale: f64,
) -> Result<SensingOperator> {
    let n = seed.len();
    if m == 0 || m > n {
        return Err(CsError::InvalidDimension(format!(
            "measurement count m = {m} must satisfy 1 <= m <= n = {n}"
        )));
    }
    let rows = match row_select {
        RowSelect::FirstM => (0..m).collect(),
        RowSelect::Random(rng) => {
            let mut rows = rand::seq::index::sample(rng, n, m).into_vec();
            rows.sort_unstable();
            rows
        }
    };
    SensingOperator::partial_circulant(seed, rows, scale)
}

/// Builds an `m x n` matrix of i.i.d. draws, scaled by `1/sqrt(m)`.
pub fn build_dense_random<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n: usize,
    dist: EntryDistribution,
) -> Result<SensingOperator> {
    if m == 0 || n == 0 || m > n {
        return Err(CsError::InvalidDimension(format!(
            "measurement count m = {m} must satisfy 1 <= m <= n = {n}"
        )));
    }
    // Row-major draw order so the stream does not depend on storage layout.
    let draws: Vec<f64> = (0..m * n).map(|_| dist.draw(rng)).collect();
    let matrix = DMatrix::from_row_slice(m, n, &draws);
    SensingOperator::dense(matrix, 1.0 / (m as f64).sqrt())
}

impl SensingOperator {
    pub fn partial_circulant(seed: SeedVector, rows: Vec<usize>, scale: f64) -> Result<Self> {
        let n = seed.len();
        let m = rows.len();
        if m == 0 || m > n {
            return Err(CsError::InvalidDimension(format!(
                "row count {m} must satisfy 1 <= m <= n = {n}"
            )));
        }
        if rows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CsError::InvalidParameter(
                "row indices must be strictly increasing".into(),
            ));
        }
        if rows[m - 1] >= n {
            return Err(CsError::InvalidDimension(format!(
                "row index {} out of range for n = {n}",
                rows[m - 1]
            )));
        }
        check_scale(scale)?;
        let fft = Some(CirculantFft::new(seed.entries()));
        Ok(Self {
            kind: OperatorKind::PartialCirculant { seed, rows },
            m,
            n,
            scale,
            rng_seed: None,
            fft,
        })
    }

    pub fn dense(matrix: DMatrix<f64>, scale: f64) -> Result<Self> {
        let (m, n) = matrix.shape();
        if m == 0 || n == 0 || m > n {
            return Err(CsError::InvalidDimension(format!(
                "dense operator shape {m}x{n} must satisfy 1 <= m <= n"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(CsError::InvalidParameter("dense entries must be finite".into()));
        }
        check_scale(scale)?;
        Ok(Self {
            kind: OperatorKind::DenseRandom { matrix },
            m,
            n,
            scale,
            rng_seed: None,
            fft: None,
        })
    }

    /// Records the RNG seed the operator was drawn from (serialized only).
    pub fn with_rng_seed(mut self, seed: u64) -> Self {
        self.rng_seed = Some(seed);
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rng_seed(&self) -> Option<u64> {
        self.rng_seed
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn kind_tag(&self) -> OperatorKindTag {
        match self.kind {
            OperatorKind::PartialCirculant { .. } => OperatorKindTag::PartialCirculant,
            OperatorKind::DenseRandom { .. } => OperatorKindTag::DenseRandom,
        }
    }

    /// Row indices for circulant operators, `None` for dense ones.
    pub fn row_indices(&self) -> Option<&[usize]> {
        match &self.kind {
            OperatorKind::PartialCirculant { rows, .. } => Some(rows),
            OperatorKind::DenseRandom { .. } => None,
        }
    }

    /// Forward map `x -> M x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(CsError::InvalidDimension(format!(
                "apply: input length {} != n = {}",
                x.len(),
                self.n
            )));
        }
        let out = match &self.kind {
            OperatorKind::PartialCirculant { rows, .. } => {
                let fft = self.fft.as_ref().expect("circulant operator has an FFT plan");
                let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
                fft.convolve(&mut buf, true);
                rows.iter().map(|&i| self.scale * buf[i].re).collect()
            }
            OperatorKind::DenseRandom { matrix } => {
                let y = matrix * DVector::from_column_slice(x);
                y.iter().map(|v| self.scale * v).collect()
            }
        };
        Ok(out)
    }

    /// Adjoint map `y -> M^T y`.
    pub fn adjoint_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.m {
            return Err(CsError::InvalidDimension(format!(
                "adjoint_apply: input length {} != m = {}",
                y.len(),
                self.m
            )));
        }
        let out = match &self.kind {
            OperatorKind::PartialCirculant { rows, .. } => {
                let fft = self.fft.as_ref().expect("circulant operator has an FFT plan");
                let mut buf = vec![Complex::new(0.0, 0.0); self.n];
                for (&i, &v) in rows.iter().zip(y) {
                    buf[i] = Complex::new(self.scale * v, 0.0);
                }
                fft.convolve(&mut buf, false);
                buf.iter().map(|v| v.re).collect()
            }
            OperatorKind::DenseRandom { matrix } => {
                let x = matrix.tr_mul(&DVector::from_column_slice(y));
                x.iter().map(|v| self.scale * v).collect()
            }
        };
        Ok(out)
    }

    /// Noiseless measurement of a signal.
    pub fn measure(&self, s: &SparseSignal) -> Result<MeasurementVector> {
        MeasurementVector::new(self.apply(s.values())?, None)
    }

    /// Explicit matrix, built from the index formula (not from `apply`).
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.m.saturating_mul(self.n) > DENSE_LIMIT {
            return Err(CsError::ResourceLimit(format!(
                "{}x{} exceeds the dense materialization limit of {DENSE_LIMIT} entries",
                self.m, self.n
            )));
        }
        let dense = match &self.kind {
            OperatorKind::PartialCirculant { seed, rows } => {
                let c = seed.entries();
                let n = self.n;
                DMatrix::from_fn(self.m, n, |r, j| self.scale * c[(j + n - rows[r]) % n])
            }
            OperatorKind::DenseRandom { matrix } => matrix * self.scale,
        };
        Ok(dense)
    }

    pub fn to_record(&self) -> OperatorRecord {
        let (seed_entries, distribution, row_indices, dense_entries) = match &self.kind {
            OperatorKind::PartialCirculant { seed, rows } => (
                Some(seed.entries().to_vec()),
                Some(seed.distribution()),
                Some(rows.clone()),
                None,
            ),
            OperatorKind::DenseRandom { matrix } => {
                let row_major = matrix.transpose().as_slice().to_vec();
                (None, None, None, Some(row_major))
            }
        };
        OperatorRecord {
            kind: self.kind_tag(),
            n: self.n,
            m: self.m,
            scale: self.scale,
            seed_entries,
            distribution,
            row_indices,
            dense_entries,
            rng_seed: self.rng_seed,
        }
    }

    pub fn from_record(record: &OperatorRecord) -> Result<Self> {
        let op = match record.kind {
            OperatorKindTag::PartialCirculant => {
                let entries = record
                    .seed_entries
                    .clone()
                    .ok_or_else(|| CsError::InvalidConfig("circulant record lacks seed_entries".into()))?;
                let rows = record
                    .row_indices
                    .clone()
                    .ok_or_else(|| CsError::InvalidConfig("circulant record lacks row_indices".into()))?;
                let seed = SeedVector::new(entries, record.distribution.unwrap_or_default())?;
                Self::partial_circulant(seed, rows, record.scale)?
            }
            OperatorKindTag::DenseRandom => {
                let entries = record
                    .dense_entries
                    .as_ref()
                    .ok_or_else(|| CsError::InvalidConfig("dense record lacks dense_entries".into()))?;
                if entries.len() != record.m * record.n {
                    return Err(CsError::InvalidDimension(format!(
                        "dense record has {} entries, expected {}",
                        entries.len(),
                        record.m * record.n
                    )));
                }
                Self::dense(DMatrix::from_row_slice(record.m, record.n, entries), record.scale)?
            }
        };
        if op.m != record.m || op.n != record.n {
            return Err(CsError::InvalidDimension(format!(
                "record declares {}x{} but contents imply {}x{}",
                record.m, record.n, op.m, op.n
            )));
        }
        Ok(match record.rng_seed {
            Some(s) => op.with_rng_seed(s),
            None => op,
        })
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !scale.is_finite() || scale == 0.0 {
        return Err(CsError::InvalidParameter(format!(
            "scale must be finite and nonzero, got {scale}"
        )));
    }
    Ok(())
}

/// Serializable description of an operator, sufficient to rebuild it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub kind: OperatorKindTag,
    pub n: usize,
    pub m: usize,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_entries: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<EntryDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_indices: Option<Vec<usize>>,
    /// Unscaled entries in row-major order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_entries: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl OperatorRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("operator record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CsError::InvalidConfig(e.to_string()))
    }
}

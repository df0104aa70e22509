//! Sparse spike test signals and additive measurement noise.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};

/// Length-`n` real signal with an optional ground-truth support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    values: Vec<f64>,
    true_support: Option<BTreeSet<usize>>,
    k: usize,
}

impl SparseSignal {
    /// Wraps values without a known support; `k` is the nonzero count.
    pub fn from_values(values: Vec<f64>) -> Self {
        let k = values.iter().filter(|v| **v != 0.0).count();
        Self {
            values,
            true_support: None,
            k,
        }
    }

    /// Wraps values with a declared support, checking that the nonzeros are
    /// exactly the support.
    pub fn with_support(values: Vec<f64>, support: BTreeSet<usize>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if (*v != 0.0) != support.contains(&i) {
                return Err(CsError::InvalidParameter(format!(
                    "entry {i} disagrees with the declared support"
                )));
            }
        }
        if support.iter().any(|&i| i >= values.len()) {
            return Err(CsError::InvalidDimension("support index out of range".into()));
        }
        Ok(Self {
            k: support.len(),
            values,
            true_support: Some(support),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn true_support(&self) -> Option<&BTreeSet<usize>> {
        self.true_support.as_ref()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Plain-text `index value` columns, one sample per line.
    pub fn to_columns(&self) -> String {
        columns(&self.values)
    }

    pub fn write_columns(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_columns()).map_err(|e| CsError::io(path, e))
    }
}

/// Renders `index value` lines for any real sequence.
pub fn columns(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{i} {v}");
    }
    out
}

/// Parses `index value` lines back into a dense sequence.
pub fn parse_columns(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(idx), Some(val), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CsError::InvalidConfig(format!(
                "line {}: expected `index value`",
                line_no + 1
            )));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| CsError::InvalidConfig(format!("line {}: bad index", line_no + 1)))?;
        let val: f64 = val
            .parse()
            .map_err(|_| CsError::InvalidConfig(format!("line {}: bad value", line_no + 1)))?;
        if idx != values.len() {
            return Err(CsError::InvalidConfig(format!(
                "line {}: index {idx} out of sequence",
                line_no + 1
            )));
        }
        values.push(val);
    }
    Ok(values)
}

/// Length-`m` observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    values: Vec<f64>,
    noise_sigma: Option<f64>,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>, noise_sigma: Option<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CsError::InvalidParameter("measurements must be finite".into()));
        }
        if let Some(s) = noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(CsError::InvalidParameter(format!("noise sigma {s} must be >= 0")));
            }
        }
        Ok(Self { values, noise_sigma })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True noise standard deviation when the vector is synthetic.
    pub fn noise_sigma(&self) -> Option<f64> {
        self.noise_sigma
    }

    /// Mean power `||r||^2 / m`.
    pub fn mean_power(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum Amplitude {
    /// Equiprobable +1 / -1.
    #[default]
    PmOne,
    /// Standard normal.
    Gaussian,
    /// Uniform on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

impl Amplitude {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        // Spikes must be nonzero; continuous laws can in principle return 0.
        loop {
            let v = match self {
                Amplitude::PmOne => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Amplitude::Gaussian => StandardNormal.sample(rng),
                Amplitude::Uniform { lo, hi } => rng.random_range(lo..hi),
            };
            if v != 0.0 {
                return v;
            }
        }
    }

    fn validate(self) -> Result<()> {
        if let Amplitude::Uniform { lo, hi } = self {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CsError::InvalidParameter(format!(
                    "uniform amplitude needs finite lo < hi, got [{lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// `k` spikes at uniformly chosen distinct positions of a length-`n` signal.
pub fn generate_spikes<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, amplitude: Amplitude) -> Result<SparseSignal> {
    if k > n {
        return Err(CsError::InvalidSparsity { k, n });
    }
    amplitude.validate()?;
    let mut values = vec![0.0; n];
    let mut positions = rand::seq::index::sample(rng, n, k).into_vec();
    positions.sort_unstable();
    for &i in &positions {
        values[i] = amplitude.draw(rng);
    }
    SparseSignal::with_support(values, positions.into_iter().collect())
}

/// Adds i.i.d. `N(0, sigma^2)` noise and records `sigma`.
pub fn add_awgn<R: Rng + ?Sized>(rng: &mut R, clean: &MeasurementVector, sigma: f64) -> Result<MeasurementVector> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CsError::InvalidParameter(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return MeasurementVector::new(clean.values.clone(), Some(0.0));
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let values = clean.values.iter().map(|v| v + normal.sample(rng)).collect();
    MeasurementVector::new(values, Some(sigma))
}

/// Noise standard deviation giving measurement SNR `snr_db` for `clean`.
pub fn sigma_for_snr(clean: &MeasurementVector, snr_db: f64) -> f64 {
    (clean.mean_power() / 10f64.powf(snr_db / 10.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_hundred_samples_fifteen_spikes() {
        let s = generate_spikes(&mut ChaCha8Rng::seed_from_u64(1), 200, 15, Amplitude::PmOne).unwrap();
        let nz = s.values().iter().filter(|v| **v != 0.0).count();
        let zeros = s.values().iter().filter(|v| v.to_bits() == 0).count();
        assert_eq!(nz, 15);
        assert_eq!(zeros, 185);
        assert_eq!(s.true_support().unwrap().len(), 15);
        assert!(s.values().iter().all(|&v| v == 0.0 || v.abs() == 1.0));
    }

    #[test]
    fn degenerate_sparsities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zero = generate_spikes(&mut rng, 10, 0, Amplitude::PmOne).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let full = generate_spikes(&mut rng, 10, 10, Amplitude::Gaussian).unwrap();
        assert!(full.values().iter().all(|&v| v != 0.0));
        assert_eq!(
            generate_spikes(&mut rng, 10, 11, Amplitude::PmOne).unwrap_err(),
            CsError::InvalidSparsity { k: 11, n: 10 }
        );
    }

    #[test]
    fn uniform_amplitudes_in_range() {
        let s = generate_spikes(
            &mut ChaCha8Rng::seed_from_u64(3),
            50,
            20,
            Amplitude::Uniform { lo: 0.5, hi: 2.0 },
        )
        .unwrap();
        for &i in s.true_support().unwrap() {
            assert!((0.5..2.0).contains(&s.values()[i]));
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let clean = MeasurementVector::new(vec![1.0, -2.0, 3.5], None).unwrap();
        let out = add_awgn(&mut ChaCha8Rng::seed_from_u64(4), &clean, 0.0).unwrap();
        assert_eq!(out.values(), clean.values());
        assert_eq!(out.noise_sigma(), Some(0.0));
    }

    #[test]
    fn noise_standard_deviation() {
        // 10^4 samples: the sample sd has relative standard error ~0.7%, so a
        // 5% band is a > 7 sigma bound.
        let clean = MeasurementVector::new(vec![0.3; 10_000], None).unwrap();
        let out = add_awgn(&mut ChaCha8Rng::seed_from_u64(5), &clean, 0.1).unwrap();
        let diffs: Vec<f64> = out.values().iter().zip(clean.values()).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() as f64 - 1.0)).sqrt();
        assert!((sd - 0.1).abs() <= 0.005, "sd {sd}");
    }

    #[test]
    fn noise_is_seeded() {
        let clean = MeasurementVector::new(vec![0.0; 16], None).unwrap();
        let a = add_awgn(&mut ChaCha8Rng::seed_from_u64(6), &clean, 1.0).unwrap();
        let b = add_awgn(&mut ChaCha8Rng::seed_from_u64(6), &clean, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_sigma_rejected() {
        let clean = MeasurementVector::new(vec![0.0; 4], None).unwrap();
        assert!(matches!(
            add_awgn(&mut ChaCha8Rng::seed_from_u64(7), &clean, -0.1),
            Err(CsError::InvalidParameter(_))
        ));
    }

    #[test]
    fn snr_sigma() {
        let clean = MeasurementVector::new(vec![1.0, -1.0, 1.0, -1.0], None).unwrap();
        assert!((sigma_for_snr(&clean, 20.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn columns_round_trip() {
        let s = generate_spikes(&mut ChaCha8Rng::seed_from_u64(8), 30, 4, Amplitude::Gaussian).unwrap();
        assert_eq!(parse_columns(&s.to_columns()).unwrap(), s.values());
    }
}

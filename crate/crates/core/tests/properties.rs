use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cs_core::bayes::{reconstruct_bayes, BayesConfig};
use cs_core::bp::{objective, optimality_certificate, reconstruct_bp, soft_threshold, BpConfig, Regularization};
use cs_core::metrics::{correlation, mean_square_error, reconstruction_error};
use cs_core::sensing::{build_circulant, make_seed, RowSelect};
use cs_core::{EntryDistribution, MeasurementVector, SensingOperator, SparseSignal};

fn circulant(seed: u64, n: usize, m: usize) -> SensingOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = make_seed(&mut rng, n, EntryDistribution::Gaussian).unwrap();
    build_circulant(c, m, RowSelect::Random(&mut rng)).unwrap()
}

/// Signal with `k` unit spikes at the given (possibly repeated) positions.
fn spikes(n: usize, positions: &[usize], signs: &[bool]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for (&p, &s) in positions.iter().zip(signs) {
        x[p % n] = if s { 1.0 } else { -1.0 };
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_pairs_with_apply(
        seed in any::<u64>(),
        n in 2usize..80,
        frac in 0.05f64..1.0,
        x in prop::collection::vec(-10.0f64..10.0, 80),
        y in prop::collection::vec(-10.0f64..10.0, 80),
    ) {
        let m = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let op = circulant(seed, n, m);
        let (x, y) = (&x[..n], &y[..m]);
        let ax = op.apply(x).unwrap();
        let aty = op.adjoint_apply(y).unwrap();
        let lhs: f64 = ax.iter().zip(y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn fast_apply_matches_dense(seed in any::<u64>(), n in 1usize..64, m_pick in 0usize..64) {
        let m = 1 + m_pick % n;
        let op = circulant(seed, n, m);
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let fast = DVector::from_vec(op.apply(&x).unwrap());
        let slow = op.to_dense().unwrap() * DVector::from_vec(x);
        prop_assert!((&fast - &slow).norm() <= 1e-10 * (1.0 + slow.norm()));
    }

    #[test]
    fn soft_threshold_shrinks(x in prop::collection::vec(-100.0f64..100.0, 0..50), t in 0.0f64..20.0) {
        let y = soft_threshold(&x, t).unwrap();
        let l1 = |v: &[f64]| v.iter().map(|e| e.abs()).sum::<f64>();
        prop_assert!(l1(&y) <= l1(&x));
        for (a, b) in x.iter().zip(&y) {
            prop_assert!(*b == 0.0 || a.signum() == b.signum());
            prop_assert!((a.abs() - b.abs() - t.min(a.abs())).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn metric_relations(
        s in prop::collection::vec(-5.0f64..5.0, 2..40),
        noise in prop::collection::vec(-1.0f64..1.0, 40),
        alpha in 0.1f64..10.0,
        beta in -10.0f64..10.0,
    ) {
        let sig = SparseSignal::from_values(s.clone());
        prop_assume!(sig.norm() > 1e-3);
        let s_hat: Vec<f64> = s.iter().zip(&noise).map(|(a, e)| a + e).collect();
        let re = reconstruction_error(&sig, &s_hat).unwrap();
        let mse = mean_square_error(&sig, &s_hat).unwrap();
        let norm2: f64 = s.iter().map(|v| v * v).sum();
        prop_assert!((mse - re * re * norm2 / s.len() as f64).abs() <= 1e-12 * (1.0 + mse));
        if let Some(cc) = correlation(&sig, &s_hat).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&cc));
            let affine: Vec<f64> = s_hat.iter().map(|v| alpha * v + beta).collect();
            let cc2 = correlation(&sig, &affine).unwrap().unwrap();
            prop_assert!((cc - cc2).abs() <= 1e-9, "{cc} vs {cc2}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Noiseless, well-determined instances are recovered almost exactly.
    #[test]
    fn bayes_noiseless_recovery(
        seed in any::<u64>(),
        n in 8usize..=24,
        k in 1usize..=3,
        positions in prop::collection::vec(0usize..24, 3),
        signs in prop::collection::vec(any::<bool>(), 3),
    ) {
        let m = 4 * k + 4;
        prop_assume!(m <= n);
        let mut uniq: Vec<usize> = positions.iter().map(|p| p % n).collect();
        uniq.sort_unstable();
        uniq.dedup();
        uniq.truncate(k);
        let x = spikes(n, &uniq, &signs);
        let op = circulant(seed, n, m);
        // Skip operators that are numerically singular on the support.
        let phi = op.to_dense().unwrap();
        let sub: DMatrix<f64> = phi.select_columns(&uniq);
        let sv = sub.singular_values();
        prop_assume!(sv.min() > 1e-3 * sv.max());

        let r = MeasurementVector::new(op.apply(&x).unwrap(), Some(0.0)).unwrap();
        let res = reconstruct_bayes(&op, &r, &BayesConfig::default()).unwrap();
        let re = reconstruction_error(&SparseSignal::from_values(x), &res.estimate).unwrap();
        prop_assert!(re <= 1e-4, "Re {re}");
    }

    /// Basis pursuit always returns a certified first-order optimum.
    #[test]
    fn bp_certificate_holds(
        seed in any::<u64>(),
        n in 4usize..40,
        m_pick in 0usize..40,
        positions in prop::collection::vec(0usize..40, 4),
        signs in prop::collection::vec(any::<bool>(), 4),
        z in prop::option::of(1e-3f64..1.0),
    ) {
        let m = 2 + m_pick % (n - 1);
        let x = spikes(n, &positions, &signs);
        let op = circulant(seed, n, m.min(n));
        let r = MeasurementVector::new(op.apply(&x).unwrap(), None).unwrap();
        let cfg = BpConfig {
            z: z.map_or(Regularization::Universal, Regularization::Fixed),
            ..BpConfig::default()
        };
        let res = reconstruct_bp(&op, &r, &cfg).unwrap();
        let z = cs_core::bp::resolve_z(&op, &r, &cfg).unwrap();
        let cert = optimality_certificate(&op, r.values(), &res.estimate, z).unwrap();
        prop_assert!(cert.holds(), "{cert:?}");
        prop_assert!(objective(&op, r.values(), &res.estimate, z).unwrap() <= r.values().iter().map(|v| v * v).sum::<f64>() + 1e-12);
    }
}

/// Six-coefficient, three-measurement, single-spike problems: the global
/// minimum never exceeds the best single-column fit, and is attained on the
/// spike's column whenever that fit is also a certified optimum.
#[test]
fn bp_beats_every_single_column_fit() {
    let mut on_spike = 0;
    for seed in 0..60u64 {
        let op = circulant(seed, 6, 3);
        let spike = (seed % 6) as usize;
        let mut x = vec![0.0; 6];
        x[spike] = if seed % 2 == 0 { 1.0 } else { -1.0 };
        let r = op.apply(&x).unwrap();
        let z = 1e-3;
        let cfg = BpConfig {
            z: Regularization::Fixed(z),
            ..BpConfig::default()
        };
        let res = reconstruct_bp(&op, &MeasurementVector::new(r.clone(), None).unwrap(), &cfg).unwrap();

        // With one active coordinate j the objective is
        // ||r - v a_j||^2 + z |v|, minimized by soft-thresholding a_j^T r.
        let phi = op.to_dense().unwrap();
        let rv = DVector::from_vec(r.clone());
        let mut best = (rv.norm_squared(), usize::MAX, vec![0.0; 6]);
        for j in 0..6 {
            let a = phi.column(j);
            let g = a.dot(&rv);
            let v = g.signum() * (g.abs() - z / 2.0).max(0.0) / a.norm_squared();
            let f = (&rv - a * v).norm_squared() + z * v.abs();
            if f < best.0 {
                let mut s = vec![0.0; 6];
                s[j] = v;
                best = (f, j, s);
            }
        }
        let got = objective(&op, &r, &res.estimate, z).unwrap();
        assert!(got <= best.0 + 1e-8, "seed {seed}: {got} > {}", best.0);
        if best.1 == spike && optimality_certificate(&op, &r, &best.2, z).unwrap().holds() {
            on_spike += 1;
            assert!((got - best.0).abs() <= 1e-8, "seed {seed}");
            assert_eq!(res.support_size, 1, "seed {seed}");
            assert!(res.estimate[spike] * x[spike] > 0.0, "seed {seed}");
        }
    }
    assert!(on_spike > 0);
}

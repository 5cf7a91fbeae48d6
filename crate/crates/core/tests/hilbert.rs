// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use openqoc_core::hilbert::{bosonic_ops, diagonalize_filter_chain, diagonalize_transmon, CompositeSpace};
use openqoc_core::linalg::{c, eigh, hermiticity_error, kron, max_abs, max_abs_diff, trace, CMat};
use openqoc_core::units::{ghz, mhz, to_ghz};
use openqoc_core::Error;
use proptest::prelude::*;

#[test]
fn reference_transmon_frequency() {
    let t = diagonalize_transmon(mhz(315.0), 51.0 * mhz(315.0), 301, 5).unwrap();
    let f01 = to_ghz(t.omega01());
    assert!((f01 - 6.0).abs() <= 0.06, "ω01/2π = {f01} GHz");
}

/// `−4E_C ∂²_φ − E_J cos φ` on a periodic phase grid with a spectral
/// second derivative, independent of the charge-basis solver.
fn phase_grid_levels(ec: f64, ej: f64, m: usize, levels: usize) -> Vec<f64> {
    use nalgebra::DMatrix;
    let h = 2.0 * std::f64::consts::PI / m as f64;
    let mut ham = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            // Periodic sinc second-derivative matrix for even m.
            let d2 = if i == j {
                -(std::f64::consts::PI * std::f64::consts::PI) / (3.0 * h * h) - 1.0 / 6.0
            } else {
                let x = (i as f64 - j as f64) * h / 2.0;
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                -sign * 0.5 / x.sin().powi(2)
            };
            ham[(i, j)] = -4.0 * ec * d2;
        }
        ham[(i, i)] -= ej * (-std::f64::consts::PI + i as f64 * h).cos();
    }
    let (e, _) = openqoc_core::linalg::eigh_real(&ham).unwrap();
    (0..levels).map(|k| e[k] - e[0]).collect()
}

#[test]
fn bare_anharmonicity_matches_phase_grid() {
    let (ec, ej) = (mhz(315.0), 51.0 * mhz(315.0));
    let t = diagonalize_transmon(ec, ej, 301, 5).unwrap();
    let grid = phase_grid_levels(ec, ej, 128, 5);
    for k in 1..5 {
        assert!(rel_err(t.energies[k], grid[k]) < 1e-9, "level {k}: {} vs {}", t.energies[k], grid[k]);
    }
}

#[test]
fn free_rotor_levels() {
    let ec = 0.7;
    let t = diagonalize_transmon(ec, 0.0, 21, 4).unwrap();
    let want = [0.0, 4.0 * ec, 4.0 * ec, 16.0 * ec];
    for (e, w) in t.energies.iter().zip(want) {
        assert!((e - w).abs() < 1e-12 * w.max(1.0), "{e} vs {w}");
    }
}

#[test]
fn small_charge_grid_already_converged() {
    let (ec, ej) = (mhz(315.0), 51.0 * mhz(315.0));
    let small = diagonalize_transmon(ec, ej, 21, 5).unwrap();
    let big = diagonalize_transmon(ec, ej, 301, 5).unwrap();
    for k in 1..5 {
        assert!(rel_err(small.energies[k], big.energies[k]) < 1e-9, "level {k}");
    }
}

#[test]
fn transmon_levels_strictly_increase() {
    for ratio in [2.0, 10.0, 51.0, 80.0] {
        let t = diagonalize_transmon(1.0, ratio, 41, 6).unwrap();
        assert!(t.energies.windows(2).all(|w| w[1] > w[0]), "E_J/E_C = {ratio}");
    }
}

#[test]
fn transmon_argument_errors() {
    assert!(matches!(diagonalize_transmon(1.0, 1.0, 11, 12), Err(Error::InvalidArgument(_))));
}

#[test]
fn uncoupled_chain() {
    let nm = diagonalize_filter_chain(ghz(7.2), ghz(7.21), 0.0, mhz(30.0), mhz(150.0)).unwrap();
    assert_eq!(nm.mode_freqs, [ghz(7.2), ghz(7.21)]);
    assert_eq!(nm.hybridization_angle, 0.0);
    assert_eq!(nm.decay_rates, [0.0, mhz(30.0)]);
}

#[test]
fn symmetric_chain() {
    let (w, j, kappa) = (ghz(7.2), mhz(30.0), mhz(30.0));
    let nm = diagonalize_filter_chain(w, w, j, kappa, mhz(150.0)).unwrap();
    assert!(((nm.mode_freqs[1] - nm.mode_freqs[0]) - 2.0 * j).abs() < 1e-12 * w);
    assert!((nm.hybridization_angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    for k in nm.decay_rates {
        assert!(rel_err(k, 0.5 * kappa) < 1e-12);
    }
}

#[test]
fn degenerate_uncoupled_chain_is_an_error() {
    let r = diagonalize_filter_chain(1.0, 1.0, 0.0, 0.1, 0.1);
    assert!(matches!(r, Err(Error::Degenerate(_))));
}

#[test]
fn chain_matches_fock_space_diagonalization() {
    let (wr, wf, j) = (ghz(7.2), ghz(7.21), mhz(30.0));
    let nm = diagonalize_filter_chain(wr, wf, j, mhz(30.0), mhz(150.0)).unwrap();
    let b = bosonic_ops(20).unwrap();
    let id = CMat::identity(20, 20);
    let a = kron(&b.lowering, &id);
    let f = kron(&id, &b.lowering);
    let h = &a.adjoint() * &a * c(wr, 0.0)
        + &f.adjoint() * &f * c(wf, 0.0)
        + (&a.adjoint() * &f + &a * &f.adjoint()) * c(j, 0.0);
    let (e, _) = eigh(&h).unwrap();
    // Lowest three levels: vacuum, then the two single-excitation modes.
    assert!(e[0].abs() < 1e-9);
    assert!((e[1] - nm.mode_freqs[0]).abs() < 1e-9 * wr, "{} vs {}", e[1], nm.mode_freqs[0]);
    assert!((e[2] - nm.mode_freqs[1]).abs() < 1e-9 * wr, "{} vs {}", e[2], nm.mode_freqs[1]);
}

#[test]
fn bosonic_ops_small_cases() {
    let b = bosonic_ops(2).unwrap();
    assert_eq!(b.lowering, real(&[&[0.0, 1.0], &[0.0, 0.0]]));
    let n4 = bosonic_ops(4).unwrap().number;
    for k in 0..4 {
        assert_eq!(n4[(k, k)], c(k as f64, 0.0));
    }
    assert_eq!(max_abs(&(n4.clone() - CMat::from_diagonal(&n4.diagonal()))), 0.0);
}

#[test]
fn truncated_commutator() {
    let n = 10;
    let b = bosonic_ops(n).unwrap();
    let comm = &b.lowering * &b.raising - &b.raising * &b.lowering;
    let mut want = CMat::identity(n, n);
    want[(n - 1, n - 1)] = c(-((n - 1) as f64), 0.0);
    assert!(max_abs_diff(&comm, &want) < 1e-12);
}

#[test]
fn embed_identity_and_sigma_z() {
    let s = CompositeSpace::new([2, 2, 2]).unwrap();
    assert_eq!(s.embed(1, &CMat::identity(2, 2)).unwrap(), CMat::identity(8, 8));
    let z = s.embed(0, &sigma_z()).unwrap();
    for k in 0..8 {
        let want = if k < 4 { 1.0 } else { -1.0 };
        assert_eq!(z[(k, k)], c(want, 0.0));
    }
    assert!(matches!(s.embed(2, &CMat::identity(3, 3)), Err(Error::DimensionMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn embed_trace_scales(seed in any::<u64>(), d0 in 1usize..4, d1 in 1usize..4, d2 in 1usize..4, sub in 0usize..3) {
        let s = CompositeSpace::new([d0, d1, d2]).unwrap();
        let n = s.dims[sub];
        let a = random_matrix(n, &mut rng(seed));
        let others: usize = s.dim() / n;
        let got = trace(&s.embed(sub, &a).unwrap());
        let want = trace(&a) * c(others as f64, 0.0);
        prop_assert!((got - want).norm() < 1e-12 * want.norm().max(1.0));
    }

    #[test]
    fn embeddings_of_distinct_factors_commute(seed in any::<u64>(), i in 0usize..3, j in 0usize..3) {
        prop_assume!(i != j);
        let s = CompositeSpace::new([2, 3, 2]).unwrap();
        let mut r = rng(seed);
        let a = s.embed(i, &random_matrix(s.dims[i], &mut r)).unwrap();
        let b = s.embed(j, &random_matrix(s.dims[j], &mut r)).unwrap();
        prop_assert!(max_abs_diff(&(&a * &b), &(&b * &a)) <= 1e-12);
    }

    #[test]
    fn chain_decay_rates_sum_to_kappa(wr in 6.0f64..8.0, wf in 6.0f64..8.0, j in 0.001f64..0.3, kappa in 0.01f64..0.5) {
        let nm = diagonalize_filter_chain(wr, wf, j, kappa, 0.1).unwrap();
        prop_assert!(nm.mode_freqs[1] > nm.mode_freqs[0]);
        prop_assert!(rel_err(nm.decay_rates[0] + nm.decay_rates[1], kappa) <= 1e-12);
    }

    #[test]
    fn transmon_operators_are_gauged(ratio in 5.0f64..80.0, levels in 3usize..7) {
        let t = diagonalize_transmon(1.0, ratio, 41, levels).unwrap();
        prop_assert_eq!(t.energies[0], 0.0);
        prop_assert!(hermiticity_error(&t.charge_op) <= 1e-12);
        for k in 0..levels - 1 {
            let v = t.charge_op[(k + 1, k)];
            prop_assert!(v.im > 0.0);
        }
        for r in 0..levels {
            for col in 0..levels {
                if col != r + 1 {
                    prop_assert_eq!(t.lowering_op[(r, col)], c(0.0, 0.0));
                }
            }
        }
    }
}

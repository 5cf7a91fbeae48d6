// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use openqoc_core::hilbert::bosonic_ops;
use openqoc_core::lindblad::{
    dp45_step, integrate, rouchon2_step, Dp45Config, LindbladGenerator, Observable, Recording,
    SolverConfig,
};
use openqoc_core::linalg::{
    c, hermiticity_error, inner, max_abs, max_abs_diff, min_eigenvalue, trace, CMat, CsrMatrix,
};
use openqoc_core::units::mhz;
use proptest::prelude::*;

fn decay_gen(kappa: f64, n: usize) -> LindbladGenerator {
    let a = bosonic_ops(n).unwrap().lowering * c(kappa.sqrt(), 0.0);
    LindbladGenerator::new(CsrMatrix::zeros(n, n), vec![sparse(&a)], vec![]).unwrap()
}

fn rabi_gen(omega: f64) -> LindbladGenerator {
    LindbladGenerator::new(sparse(&(sigma_x() * c(0.5 * omega, 0.0))), vec![], vec![]).unwrap()
}

fn record(name: &str, op: &CMat) -> Recording {
    Recording { observables: vec![Observable::new(name, sparse(op))], store_states: false }
}

#[test]
fn zero_generator_gives_zero() {
    let gen = LindbladGenerator::new(CsrMatrix::zeros(3, 3), vec![], vec![]).unwrap();
    let rho = random_density(3, &mut rng(1));
    assert_eq!(max_abs(&gen.apply_liouvillian(0.0, &[], &rho).unwrap()), 0.0);
    assert_eq!(max_abs(&gen.apply_adjoint_liouvillian(0.0, &[], &rho).unwrap()), 0.0);
}

#[test]
fn commutator_of_sigma_z_on_plus_state() {
    let w = 1.7;
    let gen = LindbladGenerator::new(sparse(&(sigma_z() * c(0.5 * w, 0.0))), vec![], vec![]).unwrap();
    let plus = real(&[&[0.5, 0.5], &[0.5, 0.5]]);
    let out = gen.apply_liouvillian(0.0, &[], &plus).unwrap();
    let hz = sigma_z() * c(0.5 * w, 0.0);
    let want = (&hz * &plus - &plus * &hz) * c(0.0, -1.0);
    assert!(max_abs_diff(&out, &want) < 1e-15);
    // Off-diagonals rotate as ∓iω·ρ_01, diagonals are untouched.
    assert!((out[(0, 1)] - c(0.0, -w * plus[(0, 1)].re)).norm() < 1e-15);
    assert!((out[(1, 0)] - c(0.0, w * plus[(1, 0)].re)).norm() < 1e-15);
    assert_eq!(out[(0, 0)], c(0.0, 0.0));
}

#[test]
fn single_photon_decay_rate() {
    let kappa = 0.37;
    let gen = decay_gen(kappa, 3);
    let out = gen.apply_liouvillian(0.0, &[], &pure(3, 1)).unwrap();
    let want = (pure(3, 0) - pure(3, 1)) * c(kappa, 0.0);
    assert!(max_abs_diff(&out, &want) < 1e-15);
}

#[test]
fn demodulated_record_removes_the_carrier() {
    let omega = 1.3;
    let gen = LindbladGenerator::new(sparse(&(sigma_z() * c(-0.5 * omega, 0.0))), vec![], vec![]).unwrap();
    let plus = real(&[&[0.5, 0.5], &[0.5, 0.5]]);
    let lower = sparse(&sigma_plus().adjoint());
    let rec = Recording {
        observables: vec![Observable::new("lab", lower.clone()), Observable::new("demod", lower).demodulated(omega)],
        store_states: false,
    };
    let times: Vec<f64> = (1..=8).map(|i| 0.7 * i as f64).collect();
    let tr = integrate(&gen, &[], &plus, 0.0, 5.6, &times, SolverConfig::Rouchon2 { dt: 0.001 }, &rec).unwrap();
    let (lab, demod) = (tr.record("lab").unwrap(), tr.record("demod").unwrap());
    for (k, &t) in times.iter().enumerate() {
        assert!((demod[k] - lab[k] * c(0.0, omega * t).exp()).norm() < 1e-12);
        assert!((demod[k] - c(0.5, 0.0)).norm() < 1e-6, "t = {t}: {}", demod[k]);
    }
}

#[test]
fn adjoint_pairing_on_random_pairs() {
    let mut r = rng(7);
    let n = 5;
    let h = random_hermitian(n, &mut r);
    let l1 = random_matrix(n, &mut r) * c(0.4, 0.0);
    let l2 = random_matrix(n, &mut r) * c(0.3, 0.0);
    let gen = LindbladGenerator::new(sparse(&h), vec![sparse(&l1), sparse(&l2)], vec![]).unwrap();
    for _ in 0..10 {
        let rho = random_matrix(n, &mut r);
        let phi = random_matrix(n, &mut r);
        let lhs = inner(&gen.apply_adjoint_liouvillian(0.0, &[], &phi).unwrap(), &rho);
        let rhs = -inner(&phi, &gen.apply_liouvillian(0.0, &[], &rho).unwrap());
        assert!((lhs - rhs).norm() <= 1e-11 * rhs.norm(), "{lhs} vs {rhs}");
    }
}

#[test]
fn identity_is_conserved_by_the_dual() {
    let mut r = rng(8);
    let n = 4;
    let gen = LindbladGenerator::new(
        sparse(&random_hermitian(n, &mut r)),
        vec![sparse(&random_matrix(n, &mut r)), sparse(&random_matrix(n, &mut r))],
        vec![],
    )
    .unwrap();
    let out = gen.apply_adjoint_liouvillian(0.3, &[], &CMat::identity(n, n)).unwrap();
    assert!(max_abs(&out) < 1e-12);
    let rho = random_density(n, &mut r);
    assert!(trace(&gen.apply_liouvillian(0.3, &[], &rho).unwrap()).norm() < 1e-12);
}

#[test]
fn tiny_step_is_continuous() {
    // Device-scale rates: a 7.2 GHz mode decaying at κ/2π = 30 MHz.
    let n = 4;
    let b = bosonic_ops(n).unwrap();
    let h = b.number.clone() * c(openqoc_core::units::ghz(7.2), 0.0);
    let l = b.lowering * c(mhz(30.0).sqrt(), 0.0);
    let gen = LindbladGenerator::new(sparse(&h), vec![sparse(&l)], vec![]).unwrap();
    let rho = random_density(n, &mut rng(2));
    let out = rouchon2_step(&gen, 0.0, &[], &rho, 1e-12).unwrap();
    assert!(max_abs_diff(&out, &rho) <= 1e-9);
}

fn decay_population(dt: f64, t_end: f64) -> f64 {
    let kappa = mhz(30.0);
    let gen = decay_gen(kappa, 3);
    let tr = integrate(
        &gen,
        &[],
        &pure(3, 1),
        0.0,
        t_end,
        &[t_end],
        SolverConfig::Rouchon2 { dt },
        &record("p1", &pure(3, 1)),
    )
    .unwrap();
    tr.record("p1").unwrap()[0].re
}

#[test]
fn rouchon_reproduces_exponential_decay() {
    let kappa = mhz(30.0);
    for t in [5.0, 20.0] {
        let p = decay_population(0.003, t);
        assert!((p - (-kappa * t).exp()).abs() < 1e-6, "t={t}: {p}");
    }
}

#[test]
fn rouchon_is_second_order() {
    let t = 20.0;
    let exact = (-mhz(30.0) * t).exp();
    let errs: Vec<f64> = [0.01, 0.005, 0.0025].iter().map(|&dt| (decay_population(dt, t) - exact).abs()).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() <= 0.2, "order {order} from {errs:?}");
    }
}

#[test]
fn rouchon_rabi_oscillation() {
    // One full period at Ω = 0.5 rad/ns.
    let omega = 0.5;
    let gen = rabi_gen(omega);
    let times: Vec<f64> = (0..=25).map(|i| i as f64 * 0.5).collect();
    let tr = integrate(&gen, &[], &pure(2, 0), 0.0, 12.5, &times, SolverConfig::Rouchon2 { dt: 0.003 }, &record("z", &sigma_z())).unwrap();
    for (t, z) in times.iter().zip(tr.record("z").unwrap()) {
        assert!((z.re - (omega * t).cos()).abs() < 1e-6, "t={t}: {} vs {}", z.re, (omega * t).cos());
    }
}

#[test]
fn dp45_decay_within_tolerance() {
    let kappa = mhz(30.0);
    let tol = 1e-8;
    let gen = decay_gen(kappa, 3);
    let cfg = Dp45Config { tol, dt_init: 0.01, dt_max: 1.0, dt_min: 1e-7 };
    let times: Vec<f64> = (1..=10).map(|i| i as f64 * 3.0).collect();
    let tr = integrate(&gen, &[], &pure(3, 1), 0.0, 30.0, &times, SolverConfig::Dp45(cfg), &record("p1", &pure(3, 1))).unwrap();
    for (t, p) in times.iter().zip(tr.record("p1").unwrap()) {
        assert!((p.re - (-kappa * t).exp()).abs() <= 10.0 * tol, "t={t}");
    }
}

#[test]
fn dp45_zero_generator_takes_max_step() {
    let gen = LindbladGenerator::new(CsrMatrix::zeros(2, 2), vec![], vec![]).unwrap();
    let cfg = Dp45Config { tol: 1e-9, dt_init: 0.5, dt_max: 0.5, dt_min: 1e-7 };
    let rho = random_density(2, &mut rng(3));
    let step = dp45_step(&gen, 0.0, &[], &rho, 0.5, &cfg).unwrap();
    assert_eq!(step.accepted_dt, 0.5);
    assert_eq!(step.next_dt, 0.5);
    assert_eq!(max_abs_diff(&step.state, &rho), 0.0);
}

#[test]
fn dp45_matches_rouchon_on_rabi() {
    let gen = rabi_gen(0.5);
    let times: Vec<f64> = (1..=8).map(|i| i as f64).collect();
    let rec = record("z", &sigma_z());
    let a = integrate(&gen, &[], &pure(2, 0), 0.0, 8.0, &times, SolverConfig::Rouchon2 { dt: 0.003 }, &rec).unwrap();
    let cfg = Dp45Config { tol: 1e-10, dt_init: 0.01, dt_max: 0.2, dt_min: 1e-7 };
    let b = integrate(&gen, &[], &pure(2, 0), 0.0, 8.0, &times, SolverConfig::Dp45(cfg), &rec).unwrap();
    for (x, y) in a.record("z").unwrap().iter().zip(b.record("z").unwrap()) {
        assert!((x - y).norm() < 1e-6);
    }
}

#[test]
fn dp45_reports_step_underflow() {
    // A huge decay rate with a tolerance no step can meet.
    let gen = decay_gen(1e9, 3);
    let cfg = Dp45Config { tol: 1e-14, dt_init: 1.0, dt_max: 1.0, dt_min: 1e-7 };
    let err = dp45_step(&gen, 0.0, &[], &pure(3, 2), 1.0, &cfg).unwrap_err();
    assert!(matches!(err, openqoc_core::Error::StepUnderflow { .. }), "{err}");
}

#[test]
fn final_state_and_save_validation() {
    let gen = decay_gen(0.1, 3);
    let rec = Recording { observables: vec![], store_states: true };
    let tr = integrate(&gen, &[], &pure(3, 2), 0.0, 2.0, &[0.0, 1.0], SolverConfig::default(), &rec).unwrap();
    assert_eq!(tr.states.as_ref().unwrap().len(), 2);
    assert!(tr.final_state.is_some());
    assert!(integrate(&gen, &[], &pure(3, 2), 0.0, 2.0, &[1.0, 0.5], SolverConfig::default(), &rec).is_err());
    assert!(integrate(&gen, &[], &pure(3, 2), 0.0, 2.0, &[3.0], SolverConfig::default(), &rec).is_err());
    assert!(integrate(&gen, &[], &pure(2, 0), 0.0, 2.0, &[], SolverConfig::default(), &rec).is_err());
}

#[test]
fn trajectory_csv_layout() {
    let gen = decay_gen(0.1, 2);
    let tr = integrate(&gen, &[], &pure(2, 1), 0.0, 1.0, &[0.0, 1.0], SolverConfig::default(), &record("n", &pure(2, 1))).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "time_ns,n_re,n_im");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,1,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rouchon_preserves_trace_hermiticity_positivity(seed in 0u64..10_000, dt in 0.001f64..0.05) {
        let mut r = rng(seed);
        let n = 4;
        let h = random_hermitian(n, &mut r);
        let l = random_matrix(n, &mut r) * c(0.5, 0.0);
        let gen = LindbladGenerator::new(sparse(&h), vec![sparse(&l)], vec![]).unwrap();
        let mut rho = random_density(n, &mut r);
        for k in 0..50 {
            rho = rouchon2_step(&gen, k as f64 * dt, &[], &rho, dt).unwrap();
            prop_assert!((trace(&rho).re - 1.0).abs() <= 1e-12);
            prop_assert!(hermiticity_error(&rho) <= 1e-10);
            prop_assert!(min_eigenvalue(&rho).unwrap() >= -1e-8);
        }
    }
}

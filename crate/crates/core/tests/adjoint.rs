// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use openqoc_core::adjoint::{
    checkpoint_times, forward_pass, propagate_backward, seed_adjoint, time_gradient, ControlProblem, GradientReport,
};
use openqoc_core::controls::{Detuning, DriveTerm};
use openqoc_core::costs::{CostKind, CostSpec, CostTerm};
use openqoc_core::hilbert::{bosonic_ops, CompositeSpace};
use openqoc_core::lindblad::{integrate, LindbladGenerator, Observable, Recording, SolverConfig, Trajectory};
use openqoc_core::linalg::{c, inner, max_abs_diff, CMat, C64};
use proptest::prelude::*;
use rand::Rng;

fn rouchon(dt: f64) -> SolverConfig {
    SolverConfig::Rouchon2 { dt }
}

fn random_theta(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

#[test]
fn checkpoint_count_follows_spacing() {
    let kappa = 0.19;
    for t in [1.0, 37.5, 100.3, 400.0] {
        let times = checkpoint_times(0.0, t, 1.0 / kappa);
        assert_eq!(times.len(), (t * kappa).ceil() as usize + 1, "T = {t}");
        assert_eq!(times[0], 0.0);
        assert_eq!(*times.last().unwrap(), t);
        assert!(times.windows(2).all(|w| w[1] - w[0] <= 1.0 / kappa * (1.0 + 1e-12)));
    }
    assert_eq!(checkpoint_times(2.0, 2.0, 1.0), vec![2.0]);
}

#[test]
fn checkpoints_equal_fresh_integration() {
    let p = qubit_problem(10, 1.1, 0.05, Detuning::Fixed(0.02), vec![excite_term()], rouchon(0.01));
    let theta = random_theta(p.generator.n_params(), 0.8, 3);
    let rec = Recording { observables: vec![], store_states: false };
    let (_, store) = forward_pass(&p.generator, &theta, &p.initial_states[0].1, 0.0, 10.0, &p.save_times, 2.0, p.solver, &rec)
        .unwrap();
    assert_eq!(store.len(), 6);
    for i in 1..store.len() {
        let ti = store.times[i];
        let mut events: Vec<f64> = p.save_times.iter().chain(&store.times).copied().filter(|&t| t <= ti).collect();
        events.sort_by(f64::total_cmp);
        events.dedup();
        let fresh = integrate(&p.generator, &theta, &p.initial_states[0].1, 0.0, ti, &events, p.solver, &rec).unwrap();
        let d = max_abs_diff(store.state(i), fresh.final_state.as_ref().unwrap());
        assert!(d <= 1e-10, "checkpoint {i}: {d}");
    }
}

/// Record-only trajectory pair for seeding tests.
fn record_pair(seed: u64) -> Vec<Trajectory> {
    let mut r = rng(seed);
    (0..2)
        .map(|_| Trajectory {
            save_times: (0..6).map(|i| i as f64).collect(),
            states: None,
            records: vec![("f".into(), (0..6).map(|_| c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect())],
            final_state: None,
        })
        .collect()
}

fn inverse_snr(weight: f64) -> CostSpec {
    CostSpec::new(
        vec![CostTerm {
            name: "snr".into(),
            weight,
            kind: CostKind::InverseSnr { record: "f".into(), ground: 0, excited: 1, eta: 0.6, kappa: 0.2 },
        }],
        1.0,
        5.0,
    )
    .unwrap()
}

#[test]
fn seeds_scale_with_weight() {
    let gen = qubit_problem(2, 1.0, 0.0, Detuning::Fixed(0.0), vec![], rouchon(0.01)).generator;
    let obs = [Observable::new("f", sparse(&sigma_plus().adjoint()))];
    let times: Vec<f64> = (0..6).map(|i| i as f64).collect();
    let trs = record_pair(1);
    let a = seed_adjoint(&inverse_snr(1.0), &gen, &trs, &[0.0; 4]).unwrap();
    let b = seed_adjoint(&inverse_snr(2.5), &gen, &trs, &[0.0; 4]).unwrap();
    for k in 0..2 {
        for i in 0..5 {
            let ka = a.kick_matrix(&gen, &obs, &times, k, i);
            let kb = b.kick_matrix(&gen, &obs, &times, k, i);
            assert!(max_abs_diff(&(ka * c(2.5, 0.0)), &kb) <= 1e-14);
        }
    }
}

#[test]
fn inverse_snr_kick_matches_state_perturbation() {
    // δC = Tr[K δρ] for a rank-one Hermitian perturbation δρ = ε|v⟩⟨v|.
    let gen = qubit_problem(2, 1.0, 0.0, Detuning::Fixed(0.0), vec![], rouchon(0.01)).generator;
    let a = sigma_plus().adjoint();
    let obs = [Observable::new("f", sparse(&a))];
    let times: Vec<f64> = (0..6).map(|i| i as f64).collect();
    let trs = record_pair(8);
    let spec = inverse_snr(1.0);
    let seeds = seed_adjoint(&spec, &gen, &trs, &[0.0; 4]).unwrap();
    let mut r = rng(12);
    for k in 0..2 {
        for i in 0..5 {
            let v = CMat::from_fn(2, 1, |_, _| c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
            let proj = &v * v.adjoint();
            let shift: C64 = (&a * &proj).trace();
            let kick = seeds.kick_matrix(&gen, &obs, &times, k, i);
            let want = inner(&kick, &proj).re;
            let h = 1e-6;
            let cost = |eps: f64| {
                let mut t = trs.clone();
                t[k].records[0].1[i] += shift * eps;
                spec.evaluate(&gen, &t, &[0.0; 4]).unwrap().total
            };
            let fd = (cost(h) - cost(-h)) / (2.0 * h);
            assert!((want - fd).abs() <= 1e-5 * fd.abs().max(1e-8), "traj {k} sample {i}: {want} vs {fd}");
        }
    }
}

#[test]
fn rabi_gradient_matches_finite_differences() {
    let p = qubit_problem(6, 1.0, 0.03, Detuning::Fixed(0.0), vec![excite_term(), average_p1_term(0.3)], tight_dp45());
    let theta = random_theta(p.generator.n_params(), 0.4, 5);
    let g = p.evaluate(&theta).unwrap().gradient.unwrap();
    let fd = p.finite_difference(&theta, 1e-5, &(0..theta.len()).collect::<Vec<_>>()).unwrap();
    let err = max_rel_err(&g, &fd, 1e-8);
    assert!(err <= 1e-4, "rel {err:e}");
}

#[test]
fn pixels_after_the_window_have_exactly_zero_gradient() {
    let mut p = qubit_problem(14, 1.0, 0.0, Detuning::Fixed(0.0), vec![average_p1_term(1.0)], rouchon(0.01));
    p.cost = CostSpec::new(vec![average_p1_term(1.0)], 1.0, 4.0).unwrap();
    p.save_times = p.cost.save_times();
    p.tn = 4.0;
    let theta = random_theta(p.generator.n_params(), 0.5, 6);
    let g = p.evaluate(&theta).unwrap().gradient.unwrap();
    // Pixel 12 starts 8 ns after the window ends.
    for (k, &gk) in g.iter().enumerate().skip(24) {
        assert_eq!(gk, 0.0, "parameter {k}");
    }
    assert!(g[..4].iter().any(|&x| x != 0.0));
}

#[test]
fn free_decay_time_gradient() {
    let gamma = 0.2;
    let p = qubit_problem(2, 1.0, gamma, Detuning::Fixed(0.0), vec![], tight_dp45());
    let theta = vec![0.0; p.generator.n_params()];
    let rec = Recording { observables: vec![], store_states: false };
    for t in [0.5, 2.0, 5.0] {
        let tr = integrate(&p.generator, &theta, &pure(2, 1), 0.0, t, &[], p.solver, &rec).unwrap();
        let rho_t = tr.final_state.unwrap();
        let dc = time_gradient(&p.generator, &theta, &pure(2, 1), &rho_t, t).unwrap();
        let want = -gamma * (-gamma * t).exp();
        assert!((dc - want).abs() <= 1e-6, "T = {t}: {dc} vs {want}");
    }
}

#[test]
fn driven_time_gradient_matches_finite_differences() {
    let p = qubit_problem(4, 1.2, 0.05, Detuning::Fixed(0.0), vec![], tight_dp45());
    let theta = random_theta(p.generator.n_params(), 0.6, 2);
    let rec = Recording { observables: vec![Observable::new("p1", sparse(&pure(2, 1)))], store_states: false };
    let p1 = |t: f64| integrate(&p.generator, &theta, &pure(2, 0), 0.0, t, &[t], p.solver, &rec).unwrap().records[0].1[0].re;
    let t = 2.7;
    let rho_t = integrate(&p.generator, &theta, &pure(2, 0), 0.0, t, &[], p.solver, &rec).unwrap().final_state.unwrap();
    let dc = time_gradient(&p.generator, &theta, &pure(2, 1), &rho_t, t).unwrap();
    let h = 1e-4;
    let fd = (p1(t + h) - p1(t - h)) / (2.0 * h);
    assert!((dc - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "{dc} vs {fd}");
}

#[test]
fn adjoint_is_the_heisenberg_dual() {
    let p = qubit_problem(5, 1.0, 0.1, Detuning::Fixed(0.05), vec![], tight_dp45());
    let theta = random_theta(p.generator.n_params(), 0.7, 9);
    let mut r = rng(33);
    let phi_t = random_hermitian(2, &mut r);
    let rec = Recording { observables: vec![], store_states: false };
    let (_, _, phi_0) = propagate_backward(&p.generator, &theta, p.solver, &pure(2, 0), &phi_t, 0.0, 5.0).unwrap();
    for _ in 0..5 {
        let rho = random_density(2, &mut r);
        let rho_t = integrate(&p.generator, &theta, &rho, 0.0, 5.0, &[], p.solver, &rec).unwrap().final_state.unwrap();
        let lhs = inner(&phi_t, &rho_t).re;
        let rhs = inner(&phi_0, &rho).re;
        assert!((lhs - rhs).abs() <= 1e-6, "{lhs} vs {rhs}");
    }
}

#[test]
fn gradient_integral_is_additive() {
    let p = qubit_problem(6, 1.0, 0.05, Detuning::Fixed(0.0), vec![], rouchon(0.01));
    let theta = random_theta(p.generator.n_params(), 0.7, 4);
    let mut r = rng(17);
    let rho = random_density(2, &mut r);
    let phi = random_hermitian(2, &mut r);
    let (whole, _, _) = propagate_backward(&p.generator, &theta, p.solver, &rho, &phi, 0.0, 6.0).unwrap();
    let (upper, rho_m, phi_m) = propagate_backward(&p.generator, &theta, p.solver, &rho, &phi, 3.0, 6.0).unwrap();
    let (lower, _, _) = propagate_backward(&p.generator, &theta, p.solver, &rho_m, &phi_m, 0.0, 3.0).unwrap();
    for k in 0..whole.len() {
        let d = (whole[k] - upper[k] - lower[k]).abs();
        assert!(d <= 1e-10 * whole[k].abs().max(1.0), "parameter {k}: {d}");
    }
}

#[test]
fn peak_memory_does_not_grow_with_step_count() {
    let peak = |dt: f64| {
        let p = qubit_problem(10, 1.0, 0.05, Detuning::Fixed(0.0), vec![excite_term(), average_p1_term(0.2)], rouchon(dt));
        let theta = random_theta(p.generator.n_params(), 0.5, 1);
        let ev = p.evaluate(&theta).unwrap();
        (ev.diagnostics.peak_live_matrices, ev.diagnostics.forward_steps, ev.diagnostics.max_restore_mismatch)
    };
    let (coarse, n_coarse, m_coarse) = peak(1e-2);
    let (fine, n_fine, m_fine) = peak(1e-3);
    assert_eq!(n_coarse, 1000);
    assert_eq!(n_fine, 10_000);
    assert_eq!(coarse, fine);
    assert!(m_coarse <= 1e-6 && m_fine <= 1e-6, "restore mismatch {m_coarse:e} / {m_fine:e}");
}

/// Three-level transmon times a five-level decaying mode in the rotating
/// frame, driven on the mode with two pixels and an optimized detuning.
fn qutrit_cavity_problem() -> ControlProblem {
    let s = CompositeSpace::new([3, 5, 1]).unwrap();
    let b = bosonic_ops(3).unwrap();
    let a = bosonic_ops(5).unwrap();
    let nq = s.embed(0, &b.number).unwrap();
    let nc = s.embed(1, &a.number).unwrap();
    let aa = s.embed(1, &a.lowering).unwrap();
    let (chi, alpha, kappa): (f64, f64, f64) = (0.15, -1.5, 0.3);
    let anh = &nq * (&nq - CMat::identity(15, 15)) * c(0.5 * alpha, 0.0);
    let h = &nq * &nc * c(chi, 0.0) + anh;
    let drive = DriveTerm::new("c", sparse(&aa.adjoint()), 0.0, 2).with_detuning(Detuning::Optimized);
    let generator = LindbladGenerator::new(sparse(&h), vec![sparse(&(aa.clone() * c(kappa.sqrt(), 0.0)))], vec![drive]).unwrap();
    let cost = CostSpec::new(
        vec![
            CostTerm {
                name: "snr".into(),
                weight: 1.0,
                kind: CostKind::InverseSnr { record: "a".into(), ground: 0, excited: 1, eta: 0.6, kappa },
            },
            CostTerm {
                name: "photons".into(),
                weight: 0.5,
                kind: CostKind::PhotonCap { record: "n".into(), n_crit: 0.05, trajectories: vec![0, 1] },
            },
        ],
        0.5,
        3.0,
    )
    .unwrap();
    let ground = s.embed(1, &pure(5, 0)).unwrap() * s.embed(0, &pure(3, 0)).unwrap();
    let excited = s.embed(1, &pure(5, 0)).unwrap() * s.embed(0, &pure(3, 1)).unwrap();
    ControlProblem {
        name: "qutrit-cavity".into(),
        initial_states: vec![("g".into(), ground), ("e".into(), excited)],
        observables: vec![Observable::new("a", sparse(&aa)), Observable::new("n", sparse(&nc))],
        save_times: cost.save_times(),
        t0: 0.0,
        tn: 3.0,
        cost,
        solver: SolverConfig::Dp45(openqoc_core::lindblad::Dp45Config { tol: 1e-11, ..Default::default() }),
        checkpoint_spacing: 1.0,
        theta0: vec![0.0; 5],
        generator,
    }
}

#[test]
fn qutrit_cavity_gradient_matches_finite_differences() {
    let p = qutrit_cavity_problem();
    assert_eq!(p.generator.n_params(), 5);
    let theta = vec![0.8, -0.3, 0.5, 0.6, 0.2];
    let ev = p.evaluate(&theta).unwrap();
    assert!(ev.terms[1].value > 0.0, "photon cap inactive");
    let g = ev.gradient.unwrap();
    let fd = p.finite_difference(&theta, 1e-5, &[0, 1, 2, 3, 4]).unwrap();
    let err = max_rel_err(&g, &fd, 1e-8);
    assert!(err <= 1e-4, "adjoint {g:?} fd {fd:?} rel {err:e}");
}

#[test]
fn demodulated_snr_gradient_matches_finite_differences() {
    let omega_q = 2.0;
    let term = CostTerm {
        name: "snr".into(),
        weight: 1.0,
        kind: CostKind::InverseSnr { record: "s".into(), ground: 0, excited: 1, eta: 0.6, kappa: 0.2 },
    };
    let mut p = qubit_problem(4, omega_q, 0.2, Detuning::Optimized, vec![], tight_dp45());
    p.cost = CostSpec::new(vec![term], 1.0, 4.0).unwrap();
    p.initial_states.push(("1".into(), pure(2, 1)));
    p.observables = vec![Observable::new("s", sparse(&sigma_plus().adjoint())).demodulated(omega_q)];
    let theta = random_theta(p.generator.n_params(), 0.6, 21);
    let g = p.evaluate(&theta).unwrap().gradient.unwrap();
    let fd = p.finite_difference(&theta, 1e-5, &(0..theta.len()).collect::<Vec<_>>()).unwrap();
    let err = max_rel_err(&g, &fd, 1e-8);
    assert!(err <= 1e-4, "adjoint {g:?} fd {fd:?} rel {err:e}");
}

#[test]
fn gradient_report_names_every_parameter() {
    let p = qubit_problem(2, 1.0, 0.0, Detuning::Optimized, vec![excite_term()], rouchon(0.01));
    let ev = p.evaluate(&[0.3, 0.0, 0.2, 0.1, 0.0]).unwrap();
    let json: serde_json::Value = serde_json::from_str(&GradientReport::new(&p, &ev).to_json().unwrap()).unwrap();
    let keys: Vec<&String> = json["gradient"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["q.re[0]", "q.im[0]", "q.re[1]", "q.im[1]", "q.detuning"]);
    assert!(json["diagnostics"]["peak_live_matrices"].as_u64().unwrap() > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gradient_is_real_and_finite(seed in any::<u64>()) {
        let p = qubit_problem(3, 1.0, 0.05, Detuning::Optimized, vec![excite_term(), average_p1_term(0.5)], rouchon(0.02));
        let theta = random_theta(p.generator.n_params(), 1.0, seed);
        let g = p.evaluate(&theta).unwrap().gradient.unwrap();
        prop_assert_eq!(g.len(), 7);
        prop_assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn evaluate_is_deterministic(seed in any::<u64>()) {
        let p = qubit_problem(3, 1.0, 0.05, Detuning::Fixed(0.0), vec![excite_term()], rouchon(0.02));
        let theta = random_theta(p.generator.n_params(), 1.0, seed);
        let a = p.evaluate(&theta).unwrap();
        let b = p.evaluate(&theta).unwrap();
        prop_assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        prop_assert_eq!(a.gradient, b.gradient);
    }
}

// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use openqoc_core::linalg::{c, CMat, CsrMatrix, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(n: usize, r: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(n, n, |_, _| c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

pub fn random_hermitian(n: usize, r: &mut ChaCha8Rng) -> CMat {
    let a = random_matrix(n, r);
    (&a + a.adjoint()) * c(0.5, 0.0)
}

/// Random full-rank density matrix.
pub fn random_density(n: usize, r: &mut ChaCha8Rng) -> CMat {
    let a = random_matrix(n, r);
    let m = &a * a.adjoint();
    let tr = m.trace();
    m / tr
}

pub fn sparse(m: &CMat) -> CsrMatrix {
    CsrMatrix::from_dense(m, 0.0)
}

pub fn dense(rows: &[&[(f64, f64)]]) -> CMat {
    let n = rows.len();
    CMat::from_fn(n, rows[0].len(), |r, col| c(rows[r][col].0, rows[r][col].1))
}

pub fn real(rows: &[&[f64]]) -> CMat {
    let n = rows.len();
    CMat::from_fn(n, rows[0].len(), |r, col| c(rows[r][col], 0.0))
}

pub fn sigma_x() -> CMat {
    real(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn sigma_z() -> CMat {
    real(&[&[1.0, 0.0], &[0.0, -1.0]])
}

/// `|1⟩⟨0|`
pub fn sigma_plus() -> CMat {
    real(&[&[0.0, 0.0], &[1.0, 0.0]])
}

pub fn pure(n: usize, k: usize) -> CMat {
    openqoc_core::linalg::projector(n, k)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn cnorm(z: C64) -> f64 {
    z.norm()
}

use openqoc_core::adjoint::ControlProblem;
use openqoc_core::controls::{Detuning, DriveTerm};
use openqoc_core::costs::{CostKind, CostSpec, CostTerm};
use openqoc_core::lindblad::{Dp45Config, LindbladGenerator, Observable, SolverConfig};

/// Tight adaptive solver for finite-difference comparisons.
pub fn tight_dp45() -> SolverConfig {
    SolverConfig::Dp45(Dp45Config { tol: 1e-11, ..Default::default() })
}

/// Qubit at `omega_q` driven through `σ₊` with carrier `omega_q`, starting
/// in `|0⟩`, with optional decay `gamma`. Records `p1 = ⟨1|ρ|1⟩` and `p0`.
pub fn qubit_problem(
    n_pixels: usize,
    omega_q: f64,
    gamma: f64,
    detuning: Detuning,
    terms: Vec<CostTerm>,
    solver: SolverConfig,
) -> ControlProblem {
    let h = sigma_z() * c(-0.5 * omega_q, 0.0);
    let jumps = if gamma > 0.0 {
        vec![sparse(&(sigma_plus().adjoint() * c(gamma.sqrt(), 0.0)))]
    } else {
        vec![]
    };
    let drive = DriveTerm::new("q", sparse(&sigma_plus()), omega_q, n_pixels).with_detuning(detuning);
    let generator = LindbladGenerator::new(sparse(&h), jumps, vec![drive]).unwrap();
    let tau = n_pixels as f64;
    let cost = CostSpec::new(terms, 1.0, tau).unwrap();
    let theta0 = vec![0.0; generator.n_params()];
    ControlProblem {
        name: "qubit".into(),
        initial_states: vec![("0".into(), pure(2, 0))],
        observables: vec![Observable::new("p1", sparse(&pure(2, 1))), Observable::new("p0", sparse(&pure(2, 0)))],
        save_times: cost.save_times(),
        t0: 0.0,
        tn: tau,
        cost,
        solver,
        checkpoint_spacing: 2.0,
        theta0,
        generator,
    }
}

/// `log10(1 − p1(T))`, minimized by a π pulse.
pub fn excite_term() -> CostTerm {
    CostTerm {
        name: "excite".into(),
        weight: 1.0,
        kind: CostKind::ResetInfidelity { record: "p1".into(), trajectory: 0, squared: false },
    }
}

/// Time-averaged excited population.
pub fn average_p1_term(weight: f64) -> CostTerm {
    CostTerm {
        name: "avg_p1".into(),
        weight,
        kind: CostKind::ForbiddenStates { record: "p1".into(), trajectories: vec![0] },
    }
}

/// Largest per-component relative error over components with `|fd| > floor`.
pub fn max_rel_err(adj: &[f64], fd: &[f64], floor: f64) -> f64 {
    adj.iter()
        .zip(fd)
        .filter(|(_, f)| f.abs() > floor)
        .map(|(a, f)| (a - f).abs() / f.abs())
        .fold(0.0, f64::max)
}

// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Shared fixtures for the benchmarks.

use openqoc_core::lindblad::SolverConfig;
use openqoc_core::linalg::CMat;
use openqoc_core::models::{build_readout_problem, Numerics, ReadoutConfig, ReadoutProblem, SystemSpec};

/// Reference device readout at truncation `dims`, `tau` ns long, seeded
/// with a flat quarter-photon pulse.
pub fn readout_fixture(dims: [usize; 3], tau: f64) -> (ReadoutProblem, Vec<f64>) {
    let spec = SystemSpec::reference().with_dims(dims);
    let cfg = ReadoutConfig {
        numerics: Numerics { solver: SolverConfig::Rouchon2 { dt: 0.01 }, checkpoint_spacing: 5.0 },
        ..ReadoutConfig::new(tau)
    };
    let p = build_readout_problem(&spec, &cfg).expect("reference readout builds");
    let theta = p.flat_seed(0.25).expect("flat seed");
    (p, theta)
}

/// The excited-state preparation of `p`.
pub fn excited_state(p: &ReadoutProblem) -> CMat {
    p.problem.initial_states[1].1.clone()
}

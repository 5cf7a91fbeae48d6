// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Transmon–resonator–filter readout and reset problems.
//!
//! The space is `transmon ⊗ driven mode ⊗ undriven mode`, where the two modes
//! are the normal modes of the resonator–filter pair. Couplings and drives
//! are kept in rotating-wave form:
//!
//! ```text
//! H = Σ_k E_k |k⟩⟨k| + Σ_j ω_j m_j†m_j
//!   + Σ_j g_j Σ_k |n_{k+1,k}| (|k+1⟩⟨k| m_j + h.c.)
//! ```
//!
//! with jumps `√κ f` and `√γ b`, where `f = Σ_j U_fj m_j` is the filter
//! field. The generator runs in the interaction
//! picture of the diagonal of `H`; drive carriers are absolute frequencies
//! and their detuning parameters are offsets from them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::ControlProblem;
use crate::controls::{Detuning, DriveTerm, PixelPulse, DEFAULT_BIN_NS};
use crate::costs::{check_forbidden_level, CostKind, CostSpec, CostTerm};
use crate::error::{Error, Result};
use crate::hilbert::{
    bosonic_ops, diagonalize_filter_chain, diagonalize_transmon, CompositeSpace, NormalModeBasis,
    TransmonEigenbasis,
};
use crate::lindblad::{FrameMode, LindbladGenerator, Observable, SolverConfig};
use crate::linalg::{c, eigh, CMat, CsrMatrix, C64};
use crate::units::{ghz, khz, mhz};

/// Which normal mode carries the readout or reset photons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Lower,
    Upper,
}

impl ModeChoice {
    pub fn index(self) -> usize {
        match self {
            ModeChoice::Lower => 0,
            ModeChoice::Upper => 1,
        }
    }
}

/// Device parameters in laboratory units.
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub E_C_MHz: f64,
    pub E_J_MHz: f64,
    /// Nominal bare transmon frequency used for `n̄_crit`.
    pub omega_t_GHz: f64,
    pub omega_r_GHz: f64,
    pub omega_f_GHz: f64,
    pub g_MHz: f64,
    pub J_MHz: f64,
    pub kappa_MHz: f64,
    pub gamma_kHz: f64,
    pub eta: f64,
    pub n_charge: usize,
    pub N_t: usize,
    pub N_d: usize,
    pub N_u: usize,
    pub driven_mode: ModeChoice,
}

impl SystemSpec {
    /// Reference device with desk-scale readout truncation.
    pub fn reference() -> Self {
        SystemSpec {
            E_C_MHz: 315.0,
            E_J_MHz: 51.0 * 315.0,
            omega_t_GHz: 6.0,
            omega_r_GHz: 7.2,
            omega_f_GHz: 7.21,
            g_MHz: 150.0,
            J_MHz: 30.0,
            kappa_MHz: 30.0,
            gamma_kHz: 8.0,
            eta: 0.6,
            n_charge: 301,
            N_t: 5,
            N_d: 12,
            N_u: 4,
            driven_mode: ModeChoice::Upper,
        }
    }

    /// Reference device with the reset truncation `N_d = N_u = 4`.
    pub fn reference_reset() -> Self {
        SystemSpec { N_d: 4, N_u: 4, ..Self::reference() }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.N_t, self.N_d, self.N_u]
    }

    pub fn with_dims(&self, dims: [usize; 3]) -> Self {
        SystemSpec { N_t: dims[0], N_d: dims[1], N_u: dims[2], ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("E_C_MHz", self.E_C_MHz),
            ("E_J_MHz", self.E_J_MHz),
            ("omega_r_GHz", self.omega_r_GHz),
            ("omega_f_GHz", self.omega_f_GHz),
            ("kappa_MHz", self.kappa_MHz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("g_MHz", self.g_MHz),
            ("J_MHz", self.J_MHz),
            ("omega_t_GHz", self.omega_t_GHz),
            ("gamma_kHz", self.gamma_kHz),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if self.N_t < 2 || self.N_d < 2 || self.N_u < 1 {
            return Err(Error::invalid(format!(
                "truncations need N_t ≥ 2, N_d ≥ 2, N_u ≥ 1, got {:?}",
                self.dims()
            )));
        }
        Ok(())
    }

    /// `T1 = 1/γ` in ns; infinite for `γ = 0`.
    pub fn t1(&self) -> f64 {
        1.0 / khz(self.gamma_kHz)
    }

    /// `(Δ/2g)²` with `Δ = ω_r − ω_t`, evaluated in MHz so that round
    /// parameters give round results.
    pub fn critical_photon_number(&self) -> f64 {
        let delta = self.omega_r_GHz * 1e3 - self.omega_t_GHz * 1e3;
        (delta / (2.0 * self.g_MHz)).powi(2)
    }
}

/// Assembled operators in rad/ns.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub spec: SystemSpec,
    pub space: CompositeSpace,
    pub transmon: TransmonEigenbasis,
    pub modes: NormalModeBasis,
    /// Normal-mode index of the driven and undriven factors.
    pub mode_order: [usize; 2],
    pub h_static: CsrMatrix,
    pub jumps: Vec<CsrMatrix>,
    /// Lowering operators of the driven and undriven modes.
    pub m_driven: CsrMatrix,
    pub m_undriven: CsrMatrix,
    /// Resonator field `a = U_ad m_d + U_au m_u`.
    pub resonator: CsrMatrix,
    /// Filter field `f = U_fd m_d + U_fu m_u`.
    pub filter: CsrMatrix,
    /// `Σ_k |n_{k+1,k}| |k+1⟩⟨k|` on the transmon.
    pub transmon_raising: CsrMatrix,
}

/// Dressed frequencies in rad/ns, indexed by normal mode (lower, upper).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DressedSpectrum {
    pub omega01: f64,
    pub omega12: f64,
    pub anharmonicity: f64,
    /// `E(g, 1_j) − E(g, 0)`
    pub mode_freqs_g: [f64; 2],
    /// `E(e, 1_j) − E(e, 0)`
    pub mode_freqs_e: [f64; 2],
    /// `E(f, 1_j) − E(f, 0)`
    pub mode_freqs_f: [f64; 2],
    /// State-dependent shift `ω_j|e − ω_j|g`.
    pub chi: [f64; 2],
    /// `E(f00) − E(g, 1_j)`, the f0–g1 transition frequency.
    pub omega_f0g1: [f64; 2],
}

impl AssembledSystem {
    pub fn new(spec: &SystemSpec) -> Result<Self> {
        spec.validate()?;
        let transmon =
            diagonalize_transmon(mhz(spec.E_C_MHz), mhz(spec.E_J_MHz), spec.n_charge, spec.N_t)?;
        let modes = diagonalize_filter_chain(
            ghz(spec.omega_r_GHz),
            ghz(spec.omega_f_GHz),
            mhz(spec.J_MHz),
            mhz(spec.kappa_MHz),
            mhz(spec.g_MHz),
        )?;
        let d = spec.driven_mode.index();
        let mode_order = [d, 1 - d];
        let space = CompositeSpace::new(spec.dims())?;

        let mt = CsrMatrix::diagonal(&transmon.energies.iter().map(|&e| c(e, 0.0)).collect::<Vec<_>>());
        let raising = CsrMatrix::from_dense(&transmon.charge_raising(), 0.0);
        let b = CsrMatrix::from_dense(&transmon.lowering_op, 0.0);
        let md = CsrMatrix::from_dense(&bosonic_ops(spec.N_d)?.lowering, 0.0);
        // N_u = 1 leaves the undriven mode in vacuum.
        let mu = if spec.N_u == 1 {
            CsrMatrix::zeros(1, 1)
        } else {
            CsrMatrix::from_dense(&bosonic_ops(spec.N_u)?.lowering, 0.0)
        };
        let m_driven = space.embed_sparse(1, &md)?;
        let m_undriven = space.embed_sparse(2, &mu)?;
        let transmon_raising = space.embed_sparse(0, &raising)?;
        let lowered = [&m_driven, &m_undriven];

        let mut h = space.embed_sparse(0, &mt)?;
        for (slot, &j) in mode_order.iter().enumerate() {
            let m = lowered[slot];
            h = h.add(&m.adjoint().matmul(m).scale(c(modes.mode_freqs[j], 0.0)));
            let coupling = transmon_raising.matmul(m).scale(c(modes.transmon_couplings[j], 0.0));
            h = h.add(&coupling).add(&coupling.adjoint());
        }
        let resonator = m_driven
            .scale(c(modes.resonator_weights[mode_order[0]], 0.0))
            .add(&m_undriven.scale(c(modes.resonator_weights[mode_order[1]], 0.0)));
        let filter = m_driven
            .scale(modes.drive_weights[mode_order[0]])
            .add(&m_undriven.scale(modes.drive_weights[mode_order[1]]));
        let jumps = vec![
            filter.scale(c(mhz(spec.kappa_MHz).sqrt(), 0.0)),
            space.embed_sparse(0, &b)?.scale(c(khz(spec.gamma_kHz).sqrt(), 0.0)),
        ];
        Ok(AssembledSystem {
            spec: spec.clone(),
            space,
            transmon,
            modes,
            mode_order,
            h_static: h,
            jumps,
            m_driven,
            m_undriven,
            resonator,
            filter,
            transmon_raising,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Normal-mode index of the driven factor.
    pub fn driven(&self) -> usize {
        self.mode_order[0]
    }

    /// `κ_d = κ U_fd²`, the decay rate of the driven mode.
    pub fn driven_decay(&self) -> f64 {
        self.modes.decay_rates[self.driven()]
    }

    /// `κ`, the filter loss rate.
    pub fn kappa(&self) -> f64 {
        mhz(self.spec.kappa_MHz)
    }

    /// `|t, n_j⟩` with the other mode empty, as factor levels.
    fn levels(&self, t: usize, mode: usize, n: usize) -> [usize; 3] {
        if mode == self.mode_order[0] {
            [t, n, 0]
        } else {
            [t, 0, n]
        }
    }

    /// Lab-frame dressed energies identified by largest overlap with bare states.
    pub fn dressed_spectrum(&self) -> Result<DressedSpectrum> {
        if self.spec.N_t < 3 {
            return Err(Error::invalid("dressed spectrum needs N_t ≥ 3"));
        }
        let (vals, vecs) = eigh(&self.h_static.to_dense())?;
        let energy = |lv: [usize; 3]| vals[dressed_index(&vecs, self.space.index(lv))];
        let e = |t: usize| energy([t, 0, 0]);
        let (e0, e1, e2) = (e(0), e(1), e(2));
        let mode = |t: usize, j: usize| energy(self.levels(t, j, 1)) - e(t);
        let g = [mode(0, 0), mode(0, 1)];
        let ex = [mode(1, 0), mode(1, 1)];
        let f = [mode(2, 0), mode(2, 1)];
        Ok(DressedSpectrum {
            omega01: e1 - e0,
            omega12: e2 - e1,
            anharmonicity: (e2 - e1) - (e1 - e0),
            mode_freqs_g: g,
            mode_freqs_e: ex,
            mode_freqs_f: f,
            chi: [ex[0] - g[0], ex[1] - g[1]],
            omega_f0g1: [e2 - energy(self.levels(0, 0, 1)), e2 - energy(self.levels(0, 1, 1))],
        })
    }

    /// Product state `|t, 0, 0⟩⟨t, 0, 0|`.
    pub fn transmon_state(&self, t: usize) -> CMat {
        self.space.basis_projector([t, 0, 0])
    }

    /// `Σ_{k ≥ n} |k⟩⟨k|` on one factor.
    pub fn level_projector(&self, factor: usize, n_min: usize) -> Result<CsrMatrix> {
        let dim = self.space.dims[factor];
        check_forbidden_level(n_min, dim)?;
        let diag: Vec<C64> = (0..dim).map(|k| c(if k >= n_min { 1.0 } else { 0.0 }, 0.0)).collect();
        self.space.embed_sparse(factor, &CsrMatrix::from_dense(&CMat::from_diagonal(&nalgebra::DVector::from_vec(diag)), 0.0))
    }

    /// Filter drive operator `U_fd m_d†`.
    pub fn filter_drive_operator(&self) -> CsrMatrix {
        self.m_driven.adjoint().scale(self.modes.drive_weights[self.driven()])
    }

    /// Flat filter-drive amplitude whose weak-drive steady state holds
    /// `n_bar` resonator photons, averaged over the `g` and `e` preparations,
    /// at `carrier`. The response comes from `H_eff = H − ½i Σ L†L` around
    /// each dressed transmon state, so the transmon's pull on the
    /// resonator–filter hybridization is included.
    pub fn flat_amplitude_for_photons(&self, n_bar: f64, carrier: f64) -> Result<f64> {
        if !(n_bar >= 0.0) || !n_bar.is_finite() {
            return Err(Error::invalid("photon number must be finite and non-negative"));
        }
        let per_unit = self.photons_per_unit_drive(carrier)?;
        let mean = 0.5 * (per_unit[0] + per_unit[1]);
        if !(mean > 0.0) {
            return Err(Error::Degenerate("drive does not reach the resonator".into()));
        }
        Ok((n_bar / mean).sqrt())
    }

    /// `H_eff = H − ½i Σ L†L`, dense.
    fn effective_hamiltonian(&self) -> CMat {
        let mut h_eff = self.h_static.to_dense();
        for l in &self.jumps {
            let ld = l.to_dense();
            h_eff -= (ld.adjoint() * &ld) * c(0.0, 0.5);
        }
        h_eff
    }

    /// Complex driven-mode frequencies `ω_t − ½iκ_t` for `t = g, e`: the
    /// `H_eff` eigenvalue nearest dressed `|t, 1_d⟩` minus the one nearest
    /// dressed `|t, 0⟩`.
    pub fn driven_mode_poles(&self) -> Result<[C64; 2]> {
        let (vals, vecs) = eigh(&self.h_static.to_dense())?;
        let eig = self
            .effective_hamiltonian()
            .schur()
            .eigenvalues()
            .ok_or_else(|| Error::Degenerate("non-Hermitian eigenvalues did not converge".into()))?;
        let nearest = |lv: [usize; 3]| -> C64 {
            let e = c(vals[dressed_index(&vecs, self.space.index(lv))], 0.0);
            eig.iter().copied().min_by(|a, b| (a - e).norm().total_cmp(&(b - e).norm())).unwrap()
        };
        let d = self.driven();
        Ok([0, 1].map(|t| nearest(self.levels(t, d, 1)) - nearest([t, 0, 0])))
    }

    /// Steady-state resonator photons per unit `Ω²` for a weak flat drive
    /// `½Ω(U_fd m_d† + h.c.)` at `carrier`, from `g` and from `e`.
    pub fn photons_per_unit_drive(&self, carrier: f64) -> Result<[f64; 2]> {
        let (vals, vecs) = eigh(&self.h_static.to_dense())?;
        let h_eff = self.effective_hamiltonian();
        let v = self.filter_drive_operator().to_dense() * c(0.5, 0.0);
        let a = self.resonator.to_dense();
        let mut out = [0.0; 2];
        for (t, slot) in out.iter_mut().enumerate() {
            let k = dressed_index(&vecs, self.space.index([t, 0, 0]));
            let psi = vecs.column(k).into_owned();
            let mut m = h_eff.clone();
            for j in 0..m.nrows() {
                m[(j, j)] -= c(vals[k] + carrier, 0.0);
            }
            let rhs = -(&v * &psi);
            let x = m.lu().solve(&rhs).ok_or_else(|| Error::Degenerate("singular drive response".into()))?;
            *slot = (&a * &x).norm_squared();
        }
        Ok(out)
    }

    fn generator(&self, drives: Vec<DriveTerm>) -> Result<LindbladGenerator> {
        LindbladGenerator::with_frame(self.h_static.clone(), self.jumps.clone(), drives, FrameMode::Diagonal)
    }
}

/// Eigenvector column with the largest weight on bare basis state `i`.
fn dressed_index(vecs: &CMat, i: usize) -> usize {
    (0..vecs.ncols()).max_by(|&a, &b| vecs[(i, a)].norm_sqr().total_cmp(&vecs[(i, b)].norm_sqr())).unwrap()
}

/// Solver and checkpoint choices shared by both problem kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Numerics {
    pub solver: SolverConfig,
    /// Checkpoint spacing in ns.
    pub checkpoint_spacing: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics { solver: SolverConfig::default(), checkpoint_spacing: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutConfig {
    /// Integration time `τ_m` in ns; also the pulse length.
    pub tau_m: f64,
    /// Adds a transmon drive at this carrier (rad/ns).
    pub transmon_drive: Option<f64>,
    /// Filter carrier in rad/ns. Defaults to the midpoint of the dressed
    /// driven-mode frequencies for `g` and `e`.
    pub filter_carrier: Option<f64>,
    pub optimize_detuning: bool,
    /// First forbidden transmon level; `None` drops the term.
    pub forbidden_transmon: Option<usize>,
    /// First forbidden undriven-mode level; `None` drops the term.
    pub forbidden_undriven: Option<usize>,
    /// Photon-number cap; defaults to `min(n̄_crit, (N_d − 1)/3)`.
    pub n_crit: Option<f64>,
    /// Rad/ns.
    pub omega_max: f64,
    pub numerics: Numerics,
}

impl ReadoutConfig {
    pub fn new(tau_m: f64) -> Self {
        ReadoutConfig {
            tau_m,
            transmon_drive: None,
            filter_carrier: None,
            optimize_detuning: true,
            forbidden_transmon: Some(3),
            forbidden_undriven: Some(2),
            n_crit: None,
            omega_max: mhz(200.0),
            numerics: Numerics::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReadoutProblem {
    pub problem: ControlProblem,
    pub system: AssembledSystem,
    pub config: ReadoutConfig,
    pub spectrum: DressedSpectrum,
    /// Filter carrier in rad/ns.
    pub carrier: f64,
    pub n_crit: f64,
}

/// Record names used by the readout problem.
pub mod records {
    pub const FIELD: &str = "field";
    pub const PHOTONS: &str = "photons";
    pub const TRANSMON_FORBIDDEN: &str = "transmon_forbidden";
    pub const UNDRIVEN_FORBIDDEN: &str = "undriven_forbidden";
    pub const GROUND: &str = "g00";
    pub const TRANSMON_EXCITED: &str = "transmon_excited";
    pub const TRANSMON_F: &str = "transmon_f";
}

fn n_pixels(tau: f64, bin: f64) -> Result<usize> {
    let n = tau / bin;
    if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 * n {
        return Err(Error::invalid(format!("duration {tau} ns is not a positive multiple of the {bin} ns bin")));
    }
    Ok(n.round() as usize)
}

fn transmon_population_ops(sys: &AssembledSystem) -> Result<Vec<Observable>> {
    Ok(vec![
        Observable::new(records::GROUND, CsrMatrix::from_dense(&sys.space.basis_projector([0, 0, 0]), 0.0)),
        Observable::new(records::TRANSMON_EXCITED, sys.level_projector(0, 1)?),
    ])
}

pub fn build_readout_problem(spec: &SystemSpec, config: &ReadoutConfig) -> Result<ReadoutProblem> {
    let sys = AssembledSystem::new(spec)?;
    let spectrum = sys.dressed_spectrum()?;
    let d = sys.driven();
    let carrier = config
        .filter_carrier
        .unwrap_or(0.5 * (spectrum.mode_freqs_g[d] + spectrum.mode_freqs_e[d]));
    let pixels = n_pixels(config.tau_m, DEFAULT_BIN_NS)?;
    let det = if config.optimize_detuning { Detuning::Optimized } else { Detuning::Fixed(0.0) };
    let mut drives = vec![DriveTerm::new("filter", sys.filter_drive_operator(), carrier, pixels).with_detuning(det)];
    if let Some(wt) = config.transmon_drive {
        drives.push(DriveTerm::new("transmon", sys.transmon_raising.clone(), wt, pixels).with_detuning(det));
    }
    let generator = sys.generator(drives)?;

    let n_crit = config
        .n_crit
        .unwrap_or_else(|| spec.critical_photon_number().min((spec.N_d - 1) as f64 / 3.0));
    let mut observables = vec![
        Observable::new(records::FIELD, sys.filter.clone()).demodulated(carrier),
        Observable::new(records::PHOTONS, sys.resonator.adjoint().matmul(&sys.resonator)),
    ];
    if let Some(n) = config.forbidden_transmon {
        observables.push(Observable::new(records::TRANSMON_FORBIDDEN, sys.level_projector(0, n)?));
    }
    if let Some(n) = config.forbidden_undriven {
        observables.push(Observable::new(records::UNDRIVEN_FORBIDDEN, sys.level_projector(2, n)?));
    }
    observables.extend(transmon_population_ops(&sys)?);

    let mut terms = vec![
        CostTerm {
            name: "inverse_snr".into(),
            weight: 1.0,
            kind: CostKind::InverseSnr {
                record: records::FIELD.into(),
                ground: 0,
                excited: 1,
                eta: spec.eta,
                kappa: sys.kappa(),
            },
        },
        CostTerm {
            name: "amplitude_filter".into(),
            weight: 0.1,
            kind: CostKind::AmplitudePenalty { drive: 0, omega_max: config.omega_max },
        },
    ];
    if config.transmon_drive.is_some() {
        terms.push(CostTerm {
            name: "amplitude_transmon".into(),
            weight: 0.1,
            kind: CostKind::AmplitudePenalty { drive: 1, omega_max: config.omega_max },
        });
    }
    if config.forbidden_transmon.is_some() {
        terms.push(CostTerm {
            name: "forbidden_transmon".into(),
            weight: 1.0,
            kind: CostKind::ForbiddenStates { record: records::TRANSMON_FORBIDDEN.into(), trajectories: vec![0, 1] },
        });
    }
    if config.forbidden_undriven.is_some() {
        terms.push(CostTerm {
            name: "forbidden_undriven".into(),
            weight: 5000.0,
            kind: CostKind::ForbiddenStates { record: records::UNDRIVEN_FORBIDDEN.into(), trajectories: vec![0, 1] },
        });
    }
    terms.extend([
        CostTerm {
            name: "photon_cap".into(),
            weight: 0.1,
            kind: CostKind::PhotonCap { record: records::PHOTONS.into(), n_crit, trajectories: vec![0, 1] },
        },
    ]);
    let cost = CostSpec::new(terms, DEFAULT_BIN_NS, config.tau_m)?;

    let theta0 = vec![0.0; generator.n_params()];
    let problem = ControlProblem {
        name: "readout".into(),
        initial_states: vec![("g".into(), sys.transmon_state(0)), ("e".into(), sys.transmon_state(1))],
        observables,
        save_times: cost.save_times(),
        t0: 0.0,
        tn: config.tau_m,
        solver: config.numerics.solver,
        checkpoint_spacing: config.numerics.checkpoint_spacing,
        cost,
        theta0,
        generator,
    };
    Ok(ReadoutProblem { problem, system: sys, config: config.clone(), spectrum, carrier, n_crit })
}

impl ReadoutProblem {
    /// Flat filter pulse holding `n_bar` resonator photons in steady state
    /// on average over the two preparations; other parameters zero.
    pub fn flat_seed(&self, n_bar: f64) -> Result<Vec<f64>> {
        let amp = self.system.flat_amplitude_for_photons(n_bar, self.carrier)?;
        let gen = &self.problem.generator;
        let mut theta = vec![0.0; gen.n_params()];
        let pixels = gen.drives()[0].n_pixels;
        gen.layout().set_pulse(&mut theta, 0, &PixelPulse::flat(pixels, c(amp, 0.0)))?;
        Ok(theta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResetConfig {
    /// Reset duration in ns.
    pub tau_m: f64,
    /// Carrier of the f0–g1 drive in rad/ns; defaults to the dressed
    /// transition frequency.
    pub omega_f0g1: Option<f64>,
    /// Carrier of the e–f drive in rad/ns; defaults to the dressed `ω12`.
    pub omega_ef: Option<f64>,
    pub optimize_detuning: bool,
    /// Penalize `1 − p²` (as tabulated) rather than `1 − p`.
    pub squared_population: bool,
    /// Rad/ns.
    pub omega_max: f64,
    /// Weights for the `g`, `e` and `f` preparations.
    pub weights: [f64; 3],
    pub numerics: Numerics,
}

impl ResetConfig {
    pub fn new(tau_m: f64) -> Self {
        ResetConfig {
            tau_m,
            omega_f0g1: None,
            omega_ef: None,
            optimize_detuning: true,
            squared_population: true,
            omega_max: mhz(600.0),
            weights: [0.3, 1.0, 0.3],
            numerics: Numerics::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResetProblem {
    pub problem: ControlProblem,
    pub system: AssembledSystem,
    pub config: ResetConfig,
    pub spectrum: DressedSpectrum,
    /// Carriers of the f0–g1 and e–f drives in rad/ns.
    pub carriers: [f64; 2],
}

pub fn build_reset_problem(spec: &SystemSpec, config: &ResetConfig) -> Result<ResetProblem> {
    if spec.N_t < 3 {
        return Err(Error::invalid(format!("reset needs N_t ≥ 3 for the f level, got {}", spec.N_t)));
    }
    let sys = AssembledSystem::new(spec)?;
    let spectrum = sys.dressed_spectrum()?;
    let d = sys.driven();
    let carriers = [
        config.omega_f0g1.unwrap_or(spectrum.omega_f0g1[d]),
        config.omega_ef.unwrap_or(spectrum.omega12),
    ];
    let pixels = n_pixels(config.tau_m, DEFAULT_BIN_NS)?;
    let det = if config.optimize_detuning { Detuning::Optimized } else { Detuning::Fixed(0.0) };
    let drives = vec![
        DriveTerm::new("f0g1", sys.transmon_raising.clone(), carriers[0], pixels).with_detuning(det),
        DriveTerm::new("ef", sys.transmon_raising.clone(), carriers[1], pixels).with_detuning(det),
    ];
    let generator = sys.generator(drives)?;
    let mut observables = transmon_population_ops(&sys)?;
    observables.push(Observable::new(records::TRANSMON_F, sys.level_projector(0, 2)?));

    let mut terms: Vec<CostTerm> = ["g", "e", "f"]
        .iter()
        .enumerate()
        .map(|(k, s)| CostTerm {
            name: format!("reset_{s}"),
            weight: config.weights[k],
            kind: CostKind::ResetInfidelity {
                record: records::GROUND.into(),
                trajectory: k,
                squared: config.squared_population,
            },
        })
        .collect();
    for (k, name) in ["f0g1", "ef"].iter().enumerate() {
        terms.push(CostTerm {
            name: format!("amplitude_{name}"),
            weight: 0.1,
            kind: CostKind::AmplitudePenalty { drive: k, omega_max: config.omega_max },
        });
    }
    let cost = CostSpec::new(terms, DEFAULT_BIN_NS, config.tau_m)?;
    let theta0 = vec![0.0; generator.n_params()];
    let problem = ControlProblem {
        name: "reset".into(),
        initial_states: (0..3).map(|k| (["g", "e", "f"][k].to_string(), sys.transmon_state(k))).collect(),
        observables,
        save_times: cost.save_times(),
        t0: 0.0,
        tn: config.tau_m,
        solver: config.numerics.solver,
        checkpoint_spacing: config.numerics.checkpoint_spacing,
        cost,
        theta0,
        generator,
    };
    Ok(ResetProblem { problem, system: sys, config: config.clone(), spectrum, carriers })
}

impl ResetProblem {
    /// Flat pulses with amplitudes `[Ω_f0g1, Ω_ef]` (rad/ns) and zero detuning.
    pub fn flat_seed(&self, amplitudes: [f64; 2]) -> Result<Vec<f64>> {
        let gen = &self.problem.generator;
        let mut theta = vec![0.0; gen.n_params()];
        for (k, &a) in amplitudes.iter().enumerate() {
            let pixels = gen.drives()[k].n_pixels;
            gen.layout().set_pulse(&mut theta, k, &PixelPulse::flat(pixels, c(a, 0.0)))?;
        }
        Ok(theta)
    }
}

/// A scanned 1-D parameter and the metric at each point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sweep {
    pub name: String,
    pub values: Vec<f64>,
    pub metric: Vec<f64>,
    pub best: f64,
}

impl Sweep {
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "{},metric", self.name)?;
        for (v, m) in self.values.iter().zip(&self.metric) {
            writeln!(w, "{v},{m}")?;
        }
        Ok(())
    }
}

/// Evaluates `metric` on `values` in parallel and returns the grid minimum.
///
/// A minimum at either end of the grid means the resonance may lie outside
/// it and is reported as [`Error::SweepBoundary`].
pub fn sweep_minimum<F>(name: &str, values: Vec<f64>, metric: F) -> Result<Sweep>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if values.len() < 3 {
        return Err(Error::invalid(format!("sweep '{name}' needs at least 3 points")));
    }
    let metric: Vec<f64> = values.par_iter().map(|&v| metric(v)).collect::<Result<_>>()?;
    let k = (0..metric.len()).min_by(|&a, &b| metric[a].total_cmp(&metric[b])).unwrap();
    if k == 0 || k + 1 == values.len() {
        return Err(Error::SweepBoundary(format!(
            "'{name}' over [{}, {}], minimum at {}",
            values[0],
            values[values.len() - 1],
            values[k]
        )));
    }
    Ok(Sweep { name: name.into(), best: values[k], values, metric })
}

/// `n` points spanning `center ± half_width`.
pub fn linear_grid(center: f64, half_width: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| center - half_width + 2.0 * half_width * i as f64 / (n - 1) as f64).collect()
}

/// Coarse sweep followed by a fine sweep over the neighbouring coarse cells.
pub fn refined_sweep<F>(name: &str, center: f64, half_width: f64, points: usize, metric: F) -> Result<Sweep>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let coarse = sweep_minimum(name, linear_grid(center, half_width, points), &metric)?;
    let step = 2.0 * half_width / (points.max(2) - 1) as f64;
    let fine = sweep_minimum(name, linear_grid(coarse.best, step, points), &metric)?;
    let mut all: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for s in [&coarse, &fine] {
        for (&v, &m) in s.values.iter().zip(&s.metric) {
            // Order-preserving key for finite floats.
            let bits = v.to_bits();
            let key = if v >= 0.0 { bits | (1 << 63) } else { !bits };
            all.insert(key, (v, m));
        }
    }
    let (values, metric): (Vec<f64>, Vec<f64>) = all.into_values().unzip();
    Ok(Sweep { name: name.into(), values, metric, best: fine.best })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationConfig {
    /// Probe duration in ns.
    pub probe_duration: f64,
    /// Half widths of the frequency sweeps (rad/ns).
    pub f0g1_half_width: f64,
    pub ef_half_width: f64,
    /// Relative half width of the `Ω_ef` sweep around its ratio estimate.
    pub amplitude_rel_half_width: f64,
    pub points: usize,
    pub numerics: Numerics,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            probe_duration: 100.0,
            f0g1_half_width: mhz(100.0),
            ef_half_width: mhz(20.0),
            amplitude_rel_half_width: 0.9,
            points: 11,
            numerics: Numerics { solver: SolverConfig::Dp45(Default::default()), checkpoint_spacing: 5.0 },
        }
    }
}

/// Calibrated flat reset drives for one `Ω_f0g1`, all in rad/ns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub omega_f0g1_amp: f64,
    pub omega_f0g1: f64,
    pub omega_ef: f64,
    pub omega_ef_amp: f64,
    /// Effective f0–g1 coupling measured by the probe.
    pub g_tilde: f64,
    pub sweeps: Vec<Sweep>,
    /// `1 − ⟨g00|ρ_i(T)|g00⟩` for `i = g, e, f` at the probe duration.
    pub residual: [f64; 3],
}

/// Three sequential sweeps per amplitude: the f0–g1 carrier from `|f00⟩`,
/// the e–f carrier from `|e00⟩` with the amplitude fixed by
/// `½ Ω_ef |n_fe| = g̃`, then the e–f amplitude.
pub fn calibrate_reset_flat(spec: &SystemSpec, amplitudes: &[f64], cal: &CalibrationConfig) -> Result<Vec<CalibrationPoint>> {
    if amplitudes.is_empty() {
        return Err(Error::invalid("calibration needs at least one f0–g1 amplitude"));
    }
    if amplitudes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::invalid("calibration is degenerate at zero f0–g1 amplitude"));
    }
    let mut rc = ResetConfig::new(cal.probe_duration);
    rc.optimize_detuning = false;
    rc.numerics = cal.numerics;
    let base = build_reset_problem(spec, &rc)?;
    let n_fe = base.system.transmon.charge_ladder()[1];
    let probe_at = |carriers: [f64; 2], amps: [f64; 2], prep: &[usize], record: &str| -> Result<Vec<f64>> {
        let cfg = ResetConfig { omega_f0g1: Some(carriers[0]), omega_ef: Some(carriers[1]), ..rc.clone() };
        let p = build_reset_problem(spec, &cfg)?;
        let theta = p.flat_seed(amps)?;
        let mut sub = p.problem.clone();
        sub.initial_states = prep.iter().map(|&k| p.problem.initial_states[k].clone()).collect();
        let trajs = sub.simulate(&theta)?;
        trajs.iter().map(|t| Ok(t.record(record)?.last().map_or(f64::NAN, |v| v.re))).collect()
    };

    amplitudes
        .iter()
        .map(|&amp| {
            let sp = &base.spectrum;
            let d = base.system.driven();
            let f0g1 = refined_sweep("omega_f0g1", sp.omega_f0g1[d], cal.f0g1_half_width, cal.points, |w| {
                Ok(probe_at([w, sp.omega12], [amp, 0.0], &[2], records::TRANSMON_F)?[0])
            })?;
            let g_tilde = measure_raman_rate(spec, f0g1.best, amp, cal)?;
            let ef_amp0 = 2.0 * g_tilde / n_fe;
            let ef = refined_sweep("omega_ef", sp.omega12, cal.ef_half_width, cal.points, |w| {
                Ok(1.0 - probe_at([f0g1.best, w], [amp, ef_amp0], &[1], records::GROUND)?[0])
            })?;
            let ef_amp = refined_sweep(
                "omega_ef_amp",
                ef_amp0,
                cal.amplitude_rel_half_width * ef_amp0,
                cal.points,
                |a| Ok(1.0 - probe_at([f0g1.best, ef.best], [amp, a], &[1], records::GROUND)?[0]),
            )?;
            let pops = probe_at([f0g1.best, ef.best], [amp, ef_amp.best], &[0, 1, 2], records::GROUND)?;
            Ok(CalibrationPoint {
                omega_f0g1_amp: amp,
                omega_f0g1: f0g1.best,
                omega_ef: ef.best,
                omega_ef_amp: ef_amp.best,
                g_tilde,
                sweeps: vec![f0g1, ef, ef_amp],
                residual: [1.0 - pops[0], 1.0 - pops[1], 1.0 - pops[2]],
            })
        })
        .collect()
}

/// Effective `|f00⟩ ↔ |g, 1_d⟩` coupling under a flat f0–g1 drive, from the
/// `f`-population trace of a lossless probe.
pub fn measure_raman_rate(spec: &SystemSpec, carrier: f64, amplitude: f64, cal: &CalibrationConfig) -> Result<f64> {
    let mut rc = ResetConfig::new(cal.probe_duration);
    rc.optimize_detuning = false;
    rc.omega_f0g1 = Some(carrier);
    rc.numerics = cal.numerics;
    let p = build_reset_problem(spec, &rc)?;
    let sys = &p.system;
    let gen = LindbladGenerator::with_frame(
        sys.h_static.clone(),
        Vec::new(),
        p.problem.generator.drives().to_vec(),
        FrameMode::Diagonal,
    )?;
    let theta = p.flat_seed([amplitude, 0.0])?;
    let f_level = if spec.N_t > 3 {
        sys.level_projector(0, 2)?.add(&sys.level_projector(0, 3)?.scale(c(-1.0, 0.0)))
    } else {
        sys.level_projector(0, 2)?
    };
    let times: Vec<f64> = (0..=(4.0 * cal.probe_duration) as usize).map(|i| 0.25 * i as f64).collect();
    let rec = crate::lindblad::Recording { observables: vec![Observable::new("f", f_level)], store_states: false };
    let tr = crate::lindblad::integrate(&gen, &theta, &sys.transmon_state(2), 0.0, cal.probe_duration, &times, cal.numerics.solver, &rec)?;
    let pf: Vec<f64> = tr.record("f")?.iter().map(|v| v.re).collect();
    raman_rate_from_population(&times, &pf)
}

/// `g̃` from a sampled `P_f(t) = 1 − A sin²(Ω_R t)` with `A = g̃²/Ω_R²`.
///
/// Uses the first crossing of the level halfway between 1 and the window
/// minimum, where `Ω_R t = π/4`. Fast small ripple from off-resonant
/// transitions moves the crossing only slightly, unlike local extrema.
pub fn raman_rate_from_population(times: &[f64], pf: &[f64]) -> Result<f64> {
    if times.len() != pf.len() || times.len() < 2 {
        return Err(Error::invalid("population trace needs at least two matching samples"));
    }
    let (kmin, min) = pf.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (k, v)| if v < a.1 { (k, v) } else { a });
    let min = min.clamp(0.0, 1.0);
    let depth = 1.0 - min;
    if depth < 1e-6 {
        return Err(Error::Degenerate("no measurable f0–g1 transfer in the probe window".into()));
    }
    if kmin + 1 == pf.len() {
        // Still falling at the end: assume resonance and invert cos²(g̃T).
        return Ok(min.sqrt().acos() / times[kmin]);
    }
    let level = 1.0 - 0.5 * depth;
    let k = pf.iter().position(|&p| p <= level).unwrap();
    // Linear interpolation between the bracketing samples.
    let t = if k == 0 {
        times[0]
    } else {
        let (p0, p1) = (pf[k - 1], pf[k]);
        times[k - 1] + (times[k] - times[k - 1]) * (p0 - level) / (p0 - p1)
    };
    if !(t > 0.0) {
        return Err(Error::Degenerate("f0–g1 transfer faster than the probe sampling".into()));
    }
    let omega_r = std::f64::consts::FRAC_PI_4 / t;
    Ok(omega_r * depth.sqrt())
}

/// Cost and record differences between two truncations.
#[derive(Clone, Debug, Serialize)]
pub struct TruncationReport {
    pub original_dims: [usize; 3],
    pub enlarged_dims: [usize; 3],
    pub original_cost: f64,
    pub enlarged_cost: f64,
    pub cost_delta: f64,
    /// Per term: name, original, enlarged, |delta|.
    pub term_deltas: Vec<(String, f64, f64, f64)>,
    /// Per record: name, max over trajectories and times of |delta|.
    pub record_deltas: Vec<(String, f64)>,
    pub max_record_delta: f64,
}

/// Problem kinds that can be rebuilt at another truncation.
#[derive(Clone, Debug)]
pub enum ProblemConfig {
    Readout(ReadoutConfig),
    Reset(ResetConfig),
}

impl ProblemConfig {
    pub fn build(&self, spec: &SystemSpec) -> Result<ControlProblem> {
        Ok(match self {
            ProblemConfig::Readout(c) => build_readout_problem(spec, c)?.problem,
            ProblemConfig::Reset(c) => build_reset_problem(spec, c)?.problem,
        })
    }
}

/// Rough bytes for a forward simulation: 16 dense matrices per trajectory.
pub fn simulation_memory_estimate(dim: usize, trajectories: usize) -> u64 {
    16 * (dim as u64).pow(2) * 16 * trajectories as u64
}

/// Re-simulates `theta` at `enlarged` truncation and compares costs and
/// records with the original.
pub fn validate_truncation(
    spec: &SystemSpec,
    config: &ProblemConfig,
    theta: &[f64],
    enlarged: [usize; 3],
    memory_cap_bytes: u64,
) -> Result<TruncationReport> {
    validate_truncation_with(spec, |s| config.build(s), theta, enlarged, memory_cap_bytes)
}

/// [`validate_truncation`] with a caller-supplied problem builder, for
/// problems modified after construction.
pub fn validate_truncation_with(
    spec: &SystemSpec,
    build: impl Fn(&SystemSpec) -> Result<ControlProblem>,
    theta: &[f64],
    enlarged: [usize; 3],
    memory_cap_bytes: u64,
) -> Result<TruncationReport> {
    let orig = spec.dims();
    if enlarged.iter().zip(&orig).any(|(e, o)| e < o) {
        return Err(Error::invalid(format!("enlarged dims {enlarged:?} must not be smaller than {orig:?}")));
    }
    let small = build(spec)?;
    let big_spec = spec.with_dims(enlarged);
    let dim: usize = enlarged.iter().product();
    let estimate = simulation_memory_estimate(dim, small.initial_states.len());
    if estimate > memory_cap_bytes {
        return Err(Error::MemoryCap { estimate_bytes: estimate, cap_bytes: memory_cap_bytes });
    }
    let big = build(&big_spec)?;
    if big.generator.layout().names != small.generator.layout().names {
        return Err(Error::invalid("parameter layouts differ between truncations"));
    }
    let a = small.cost_only(theta)?;
    let b = big.cost_only(theta)?;
    let term_deltas = a
        .terms
        .iter()
        .zip(&b.terms)
        .map(|(x, y)| (x.name.clone(), x.value, y.value, (x.value - y.value).abs()))
        .collect();
    let mut record_deltas = Vec::new();
    for (k, (name, _)) in a.trajectories[0].records.iter().enumerate() {
        let mut m: f64 = 0.0;
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            for (x, y) in ta.records[k].1.iter().zip(&tb.records[k].1) {
                m = m.max((x - y).norm());
            }
        }
        record_deltas.push((name.clone(), m));
    }
    let max_record_delta = record_deltas.iter().fold(0.0_f64, |m, r| m.max(r.1));
    Ok(TruncationReport {
        original_dims: orig,
        enlarged_dims: enlarged,
        original_cost: a.cost,
        enlarged_cost: b.cost,
        cost_delta: (a.cost - b.cost).abs(),
        term_deltas,
        record_deltas,
        max_record_delta,
    })
}

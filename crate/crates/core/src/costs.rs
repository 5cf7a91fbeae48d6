// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Cost terms over recorded expectation values, their adjoint seeds, and the
//! readout figures of merit (SNR, its steady-state fit, assignment error).
//!
//! Every time integral is a left-Riemann sum on the grid `t_i = i·Δt`,
//! `i = 0..M`, with `M·Δt = τ_m`. Records therefore need at least `M`
//! samples, and `M + 1` when a term reads the state at `τ_m`.

use std::io::Write;

use crate::controls::zeta_window;
use crate::error::{Error, Result};
use crate::lindblad::{LindbladGenerator, Trajectory};
use crate::linalg::{c, C64};

/// Below this SNR the inverse-SNR term is clamped and sends no gradient.
pub const SNR_FLOOR: f64 = 1e-9;
/// Lower clamp on `1 − p²` inside the reset logarithm.
pub const RESET_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum CostKind {
    /// `1/SNR` between trajectories `ground` and `excited` on a complex record.
    InverseSnr { record: String, ground: usize, excited: usize, eta: f64, kappa: f64 },
    /// `(1/τ_m) Σ ReLU(|Ω(t_i)| − Ω_max) Δt` for drive `drive`.
    AmplitudePenalty { drive: usize, omega_max: f64 },
    /// Time-averaged population of a forbidden subspace, summed over trajectories.
    ForbiddenStates { record: String, trajectories: Vec<usize> },
    /// `(1/τ_m) Σ ReLU(n̄(t_i) − n̄_crit) Δt`, summed over trajectories.
    PhotonCap { record: String, n_crit: f64, trajectories: Vec<usize> },
    /// `log10(max(1 − q, 10⁻¹²))` with `q = p²` (or `p`) and `p` the final
    /// target population.
    ResetInfidelity { record: String, trajectory: usize, squared: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostTerm {
    pub name: String,
    pub weight: f64,
    pub kind: CostKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub terms: Vec<CostTerm>,
    /// Grid step `Δt` in ns.
    pub bin: f64,
    /// Integration time `τ_m` in ns.
    pub tau_m: f64,
}

/// `∂C/∂f` for the record `f = Tr[Aρ(t_i)]`, written as
/// `coef = ∂C/∂Re f + i ∂C/∂Im f`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordKick {
    pub save_index: usize,
    pub record: usize,
    pub coef: C64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermValue {
    pub name: String,
    pub weight: f64,
    /// Unweighted value.
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct CostEvaluation {
    pub total: f64,
    pub terms: Vec<TermValue>,
    /// Per trajectory, weighted.
    pub kicks: Vec<Vec<RecordKick>>,
    /// Direct `∂C/∂θ`, weighted.
    pub direct_grad: Vec<f64>,
}

impl CostSpec {
    pub fn new(terms: Vec<CostTerm>, bin: f64, tau_m: f64) -> Result<Self> {
        let spec = CostSpec { terms, bin, tau_m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_bins(&self) -> usize {
        (self.tau_m / self.bin).round() as usize
    }

    /// `t_i = i·Δt` for `i = 0..=M`.
    pub fn save_times(&self) -> Vec<f64> {
        (0..=self.n_bins()).map(|i| i as f64 * self.bin).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin > 0.0 && self.tau_m > 0.0) {
            return Err(Error::invalid("cost grid needs positive bin and τ_m"));
        }
        let m = self.tau_m / self.bin;
        if (m - m.round()).abs() > 1e-9 * m.max(1.0) {
            return Err(Error::invalid(format!("τ_m = {} ns is not a multiple of the {} ns bin", self.tau_m, self.bin)));
        }
        for t in &self.terms {
            if !(t.weight >= 0.0 && t.weight.is_finite()) {
                return Err(Error::invalid(format!("term '{}': weight must be finite and ≥ 0", t.name)));
            }
            match &t.kind {
                CostKind::InverseSnr { eta, kappa, .. } => {
                    if !(0.0..=1.0).contains(eta) {
                        return Err(Error::invalid(format!("term '{}': η must lie in [0, 1]", t.name)));
                    }
                    if !(*kappa > 0.0) {
                        return Err(Error::invalid(format!("term '{}': κ must be positive", t.name)));
                    }
                }
                CostKind::AmplitudePenalty { omega_max, .. } if !(*omega_max > 0.0) => {
                    return Err(Error::invalid(format!("term '{}': Ω_max must be positive", t.name)));
                }
                CostKind::PhotonCap { n_crit, .. } if !(*n_crit >= 0.0) => {
                    return Err(Error::invalid(format!("term '{}': n̄_crit must be ≥ 0", t.name)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Total cost, per-term values, adjoint kicks and direct parameter partials.
    pub fn evaluate(
        &self,
        gen: &LindbladGenerator,
        trajectories: &[Trajectory],
        theta: &[f64],
    ) -> Result<CostEvaluation> {
        let m = self.n_bins();
        let dt = self.bin;
        let mut kicks: Vec<Vec<RecordKick>> = vec![Vec::new(); trajectories.len()];
        let mut direct = vec![0.0; theta.len()];
        let mut values = Vec::with_capacity(self.terms.len());
        let lookup = |k: usize, name: &str| -> Result<(usize, &[C64])> {
            let tr = trajectories
                .get(k)
                .ok_or_else(|| Error::MissingRecord(format!("trajectory {k}")))?;
            let idx = tr
                .records
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::MissingRecord(format!("'{name}' in trajectory {k}")))?;
            Ok((idx, tr.records[idx].1.as_slice()))
        };
        for term in &self.terms {
            let w = term.weight;
            let value = match &term.kind {
                CostKind::InverseSnr { record, ground, excited, eta, kappa } => {
                    let (ig, bg) = lookup(*ground, record)?;
                    let (ie, be) = lookup(*excited, record)?;
                    let (v, seeds) = inverse_snr_with_seeds(bg, be, *eta, *kappa, self.tau_m, dt)?;
                    if w != 0.0 {
                        for (i, s) in seeds.iter().enumerate() {
                            kicks[*ground].push(RecordKick { save_index: i, record: ig, coef: -w * s });
                            kicks[*excited].push(RecordKick { save_index: i, record: ie, coef: w * s });
                        }
                    }
                    v
                }
                CostKind::AmplitudePenalty { drive, omega_max } => {
                    let (v, g) = drive_amplitude_penalty(gen, *drive, theta, *omega_max, self.tau_m, dt)?;
                    for (d, gi) in direct.iter_mut().zip(g) {
                        *d += w * gi;
                    }
                    v
                }
                CostKind::ForbiddenStates { record, trajectories: which } => {
                    let mut total = 0.0;
                    for &k in which {
                        let (idx, rec) = lookup(k, record)?;
                        let (v, seeds) = time_average_with_seeds(rec, m, dt, self.tau_m, None)?;
                        total += v;
                        push_real_kicks(&mut kicks[k], idx, &seeds, w);
                    }
                    total
                }
                CostKind::PhotonCap { record, n_crit, trajectories: which } => {
                    let mut total = 0.0;
                    for &k in which {
                        let (idx, rec) = lookup(k, record)?;
                        let (v, seeds) = time_average_with_seeds(rec, m, dt, self.tau_m, Some(*n_crit))?;
                        total += v;
                        push_real_kicks(&mut kicks[k], idx, &seeds, w);
                    }
                    total
                }
                CostKind::ResetInfidelity { record, trajectory, squared } => {
                    let (idx, rec) = lookup(*trajectory, record)?;
                    let p = rec
                        .get(m)
                        .ok_or_else(|| Error::MissingRecord(format!("'{record}' at τ_m (sample {m})")))?
                        .re;
                    let (v, dv) = reset_infidelity(p, *squared);
                    if w != 0.0 && dv != 0.0 {
                        kicks[*trajectory].push(RecordKick { save_index: m, record: idx, coef: c(w * dv, 0.0) });
                    }
                    v
                }
            };
            values.push(TermValue { name: term.name.clone(), weight: w, value });
        }
        let total = values.iter().map(|t| t.weight * t.value).sum();
        Ok(CostEvaluation { total, terms: values, kicks, direct_grad: direct })
    }
}

fn push_real_kicks(out: &mut Vec<RecordKick>, record: usize, seeds: &[f64], w: f64) {
    if w == 0.0 {
        return;
    }
    for (i, &s) in seeds.iter().enumerate() {
        if s != 0.0 {
            out.push(RecordKick { save_index: i, record, coef: c(w * s, 0.0) });
        }
    }
}

fn check_grid(len: usize, m: usize, what: &str) -> Result<()> {
    if len < m {
        return Err(Error::invalid(format!("{what}: {len} samples do not cover {m} bins")));
    }
    Ok(())
}

/// `SNR = sqrt(2ηκ Σ_{i<M} |β_e(t_i) − β_g(t_i)|² Δt)`.
pub fn snr(beta_g: &[C64], beta_e: &[C64], eta: f64, kappa: f64, tau_m: f64, bin: f64) -> Result<f64> {
    Ok(snr_sq(beta_g, beta_e, eta, kappa, tau_m, bin)?.sqrt())
}

fn snr_sq(beta_g: &[C64], beta_e: &[C64], eta: f64, kappa: f64, tau_m: f64, bin: f64) -> Result<f64> {
    if beta_g.len() != beta_e.len() {
        return Err(Error::invalid(format!(
            "record grids differ: {} vs {} samples",
            beta_g.len(),
            beta_e.len()
        )));
    }
    let m = (tau_m / bin).round() as usize;
    check_grid(beta_g.len(), m, "SNR records")?;
    let s: f64 = beta_g[..m].iter().zip(&beta_e[..m]).map(|(g, e)| (e - g).norm_sqr()).sum();
    Ok(2.0 * eta * kappa * s * bin)
}

/// SNR for every `τ_m = k·Δt`, `k = 1..=M`, from one pair of records.
pub fn snr_curve(beta_g: &[C64], beta_e: &[C64], eta: f64, kappa: f64, bin: f64) -> Vec<(f64, f64)> {
    let mut acc = 0.0;
    let n = beta_g.len().min(beta_e.len());
    (0..n.saturating_sub(1))
        .map(|i| {
            acc += (beta_e[i] - beta_g[i]).norm_sqr();
            ((i + 1) as f64 * bin, (2.0 * eta * kappa * acc * bin).sqrt())
        })
        .collect()
}

/// `1/SNR` and `∂(1/SNR)/∂β_e(t_i)` in the complex-coefficient convention.
/// The seed for `β_g` is the negative.
fn inverse_snr_with_seeds(
    beta_g: &[C64],
    beta_e: &[C64],
    eta: f64,
    kappa: f64,
    tau_m: f64,
    bin: f64,
) -> Result<(f64, Vec<C64>)> {
    let q = snr_sq(beta_g, beta_e, eta, kappa, tau_m, bin)?;
    let m = (tau_m / bin).round() as usize;
    if q.sqrt() < SNR_FLOOR {
        return Ok((1.0 / SNR_FLOOR, vec![c(0.0, 0.0); m]));
    }
    // C = Q^{-1/2}, dQ = 2ηκΔt Σ 2 Re(conj(d_i) δd_i).
    let f = -2.0 * eta * kappa * bin * q.powf(-1.5);
    let seeds = (0..m).map(|i| (beta_e[i] - beta_g[i]) * f).collect();
    Ok((q.powf(-0.5), seeds))
}

/// `(1/τ_m) Σ_{i<M} g(Re f_i) Δt` with `g(x) = x` or `ReLU(x − cap)`.
fn time_average_with_seeds(
    rec: &[C64],
    m: usize,
    bin: f64,
    tau_m: f64,
    cap: Option<f64>,
) -> Result<(f64, Vec<f64>)> {
    check_grid(rec.len(), m, "record")?;
    let mut v = 0.0;
    let mut seeds = vec![0.0; m];
    for i in 0..m {
        let x = rec[i].re;
        match cap {
            None => {
                v += x;
                seeds[i] = bin / tau_m;
            }
            Some(cap) => {
                if x > cap {
                    v += x - cap;
                    seeds[i] = bin / tau_m;
                }
            }
        }
    }
    Ok((v * bin / tau_m, seeds))
}

/// `(1/τ_m) Σ ReLU(n̄(t_i) − n̄_crit) Δt` and its per-sample seed `∂/∂n̄(t_i)`.
pub fn critical_photon_cap(record: &[f64], n_crit: f64, tau_m: f64, bin: f64) -> Result<(f64, Vec<f64>)> {
    let rec: Vec<C64> = record.iter().map(|&x| c(x, 0.0)).collect();
    time_average_with_seeds(&rec, (tau_m / bin).round() as usize, bin, tau_m, Some(n_crit))
}

/// Sum over records of the time-averaged forbidden-subspace population and
/// the per-sample seed (identical for every record).
pub fn forbidden_state_cost(records: &[&[f64]], tau_m: f64, bin: f64) -> Result<(f64, Vec<f64>)> {
    let m = (tau_m / bin).round() as usize;
    let mut total = 0.0;
    let mut seeds = vec![0.0; m];
    for r in records {
        let rec: Vec<C64> = r.iter().map(|&x| c(x, 0.0)).collect();
        let (v, s) = time_average_with_seeds(&rec, m, bin, tau_m, None)?;
        total += v;
        seeds = s;
    }
    Ok((total, seeds))
}

/// Checks a forbidden level set `{n, n+1, …}` against a truncation.
pub fn check_forbidden_level(n_min: usize, dim: usize) -> Result<()> {
    if n_min >= dim {
        return Err(Error::invalid(format!(
            "forbidden level {n_min} is not below the truncation {dim}"
        )));
    }
    Ok(())
}

/// Value and derivative w.r.t. `p` of `log10(max(1 − q, 10⁻¹²))`.
pub fn reset_infidelity(p: f64, squared: bool) -> (f64, f64) {
    let (q, dq) = if squared { (p * p, 2.0 * p) } else { (p, 1.0) };
    let x = 1.0 - q;
    if x > RESET_FLOOR {
        (x.log10(), -dq / (x * std::f64::consts::LN_10))
    } else {
        (RESET_FLOOR.log10(), 0.0)
    }
}

/// `(1/τ_m) Σ_{i<M} ReLU(|Ω(t_i)| − Ω_max) Δt` for drive `k` of `gen`, and its
/// gradient with respect to the full parameter vector.
pub fn drive_amplitude_penalty(
    gen: &LindbladGenerator,
    k: usize,
    theta: &[f64],
    omega_max: f64,
    tau_m: f64,
    bin: f64,
) -> Result<(f64, Vec<f64>)> {
    let drive = gen
        .drives()
        .get(k)
        .ok_or_else(|| Error::invalid(format!("no drive with index {k}")))?;
    let slots = &gen.layout().drives[k];
    let m = (tau_m / bin).round() as usize;
    let mut grad = vec![0.0; theta.len()];
    let mut zeta = Vec::new();
    let mut v = 0.0;
    for i in 0..m {
        let t = i as f64 * bin;
        let first = zeta_window(t, slots.n_pixels, drive.bin, drive.omega0, &mut zeta);
        let omega: C64 = zeta.iter().enumerate().map(|(q, &z)| slots.amplitude(theta, first + q) * z).sum();
        let mag = omega.norm();
        if mag > omega_max {
            v += (mag - omega_max) * bin / tau_m;
            let (ur, ui) = (omega.re / mag, omega.im / mag);
            for (q, &z) in zeta.iter().enumerate() {
                let j = first + q;
                grad[slots.pixels + 2 * j] += ur * z * bin / tau_m;
                grad[slots.pixels + 2 * j + 1] += ui * z * bin / tau_m;
            }
        }
    }
    Ok((v, grad))
}

/// Amplitude penalty of a standalone pulse; gradient is `[∂/∂Re Ω_j, ∂/∂Im Ω_j]` pairs.
pub fn amplitude_penalty(
    pulse: &crate::controls::PixelPulse,
    omega_max: f64,
    tau_m: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(omega_max > 0.0) {
        return Err(Error::invalid("Ω_max must be positive"));
    }
    let n = pulse.amplitudes.len();
    let m = (tau_m / pulse.bin).round() as usize;
    let mut grad = vec![0.0; 2 * n];
    let mut zeta = Vec::new();
    let mut v = 0.0;
    for i in 0..m {
        let t = i as f64 * pulse.bin;
        let first = zeta_window(t, n, pulse.bin, pulse.filter_omega0, &mut zeta);
        let omega: C64 = zeta.iter().enumerate().map(|(q, &z)| pulse.amplitudes[first + q] * z).sum();
        let mag = omega.norm();
        if mag > omega_max {
            v += (mag - omega_max) * pulse.bin / tau_m;
            for (q, &z) in zeta.iter().enumerate() {
                grad[2 * (first + q)] += omega.re / mag * z * pulse.bin / tau_m;
                grad[2 * (first + q) + 1] += omega.im / mag * z * pulse.bin / tau_m;
            }
        }
    }
    Ok((v, grad))
}

/// `ε_a = ½ erfc(SNR/2) + τ_m/(2T₁)`
pub fn assignment_error(snr: f64, tau_m: f64, t1: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(Error::invalid("SNR must be non-negative"));
    }
    Ok(0.5 * libm::erfc(0.5 * snr) + tau_m / (2.0 * t1))
}

/// Steady-state readout model `SNR(τ) = α√(2ηκ)(√τ − √τ₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrFitModel {
    pub alpha: f64,
    /// `φ = arctan(2χ/κ)`
    pub phi: f64,
    pub tau_m0: f64,
    pub eta: f64,
    pub kappa: f64,
}

impl SnrFitModel {
    pub fn predict(&self, tau_m: f64) -> f64 {
        self.alpha * (2.0 * self.eta * self.kappa).sqrt() * (tau_m.sqrt() - self.tau_m0.sqrt())
    }

    /// Largest `|model − sample|/sample` over samples with `τ ≥ tau_min`.
    pub fn max_relative_residual(&self, samples: &[(f64, f64)], tau_min: f64) -> f64 {
        samples
            .iter()
            .filter(|(t, s)| *t >= tau_min && *s > 0.0)
            .map(|&(t, s)| (self.predict(t) - s).abs() / s)
            .fold(0.0, f64::max)
    }
}

/// `(α, φ)` with `α = 2|Ω sin 2φ|/κ`, `φ = arctan(2χ/κ)`. Here `Ω` is the drive
/// amplitude in the mode frame and `χ` the qubit-state half-shift.
pub fn snr_fit_alpha(kappa: f64, chi: f64, omega: f64) -> (f64, f64) {
    let phi = (2.0 * chi / kappa).atan();
    ((2.0 * omega * (2.0 * phi).sin()).abs() / kappa, phi)
}

/// Least-squares fit of `τ₀` in `SNR(τ) = α√(2ηκ)(√τ − √τ₀)` with `α` fixed
/// by [`snr_fit_alpha`].
pub fn snr_fit(kappa: f64, chi: f64, omega: f64, eta: f64, samples: &[(f64, f64)]) -> Result<SnrFitModel> {
    if samples.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} samples given, at least 3 needed", samples.len())));
    }
    if !(kappa > 0.0 && eta > 0.0) {
        return Err(Error::DegenerateFit("κ and η must be positive".into()));
    }
    let (alpha, phi) = snr_fit_alpha(kappa, chi, omega);
    let a = alpha * (2.0 * eta * kappa).sqrt();
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::DegenerateFit("steady-state displacement α is zero".into()));
    }
    // SNR_i = a(√τ_i − s) is linear in s = √τ₀.
    let s = samples.iter().map(|&(t, y)| t.sqrt() - y / a).sum::<f64>() / samples.len() as f64;
    let s = s.max(0.0);
    Ok(SnrFitModel { alpha, phi, tau_m0: s * s, eta, kappa })
}

/// Writes `epoch,total,<term>...` rows.
pub fn write_epoch_csv(w: &mut impl Write, names: &[String], rows: &[(usize, f64, Vec<f64>)]) -> Result<()> {
    write!(w, "epoch,total")?;
    for n in names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (e, total, terms) in rows {
        write!(w, "{e},{total}")?;
        for v in terms {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

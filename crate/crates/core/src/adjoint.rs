// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Adjoint-state gradients with checkpointed reverse-time replay.
//!
//! The forward pass stores `ρ` only at sparse checkpoints. The backward pass
//! integrates `ρ` backwards in time together with the adjoint state `φ`
//! (`dφ/dt = −𝓛†φ`), restores `ρ` at every checkpoint, adds the cost's
//! kicks at save times and accumulates
//! `dC/dθ = ∂C/∂θ + ∫ Re Tr[φ†(∂θ𝓛)ρ] dt` with a per-step midpoint rule.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::costs::{CostEvaluation, CostSpec, RecordKick, TermValue};
use crate::error::{Error, Result};
use crate::lindblad::{
    kraus_apply, kraus_dual, kraus_steps, merge_times, renormalize, run_forward, same_time, Dp45,
    FramedOperator, InstantOps, KrausScratch, LindbladGenerator, Observable, Recording, Rhs,
    SolverConfig, Trajectory,
};
use crate::linalg::{
    axpy_re, copy_into, inner, CMat, MatrixCounter, TrackedMatrix,
};

/// Growth of `‖ρ‖_F` since the last checkpoint that counts as divergence.
pub const DIVERGENCE_GROWTH: f64 = 1e3;

/// Forward states kept for the reverse-time replay.
#[derive(Debug)]
pub struct CheckpointStore {
    pub times: Vec<f64>,
    /// Solver steps taken by the forward pass that filled the store.
    pub forward_steps: usize,
    states: Vec<TrackedMatrix>,
    counter: MatrixCounter,
}

impl CheckpointStore {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &CMat {
        &self.states[i]
    }

    /// Counter shared by the checkpoints and every work matrix of the passes.
    pub fn live_counter(&self) -> &MatrixCounter {
        &self.counter
    }
}

/// Evenly spaced checkpoint times from `t0` to `tn` with spacing at most
/// `spacing`; both ends included.
pub fn checkpoint_times(t0: f64, tn: f64, spacing: f64) -> Vec<f64> {
    let span = tn - t0;
    if span <= 0.0 {
        return vec![t0];
    }
    let m = ((span / spacing) - 1e-9).ceil().max(1.0) as usize;
    (0..=m).map(|i| if i == m { tn } else { t0 + span * i as f64 / m as f64 }).collect()
}

/// Forward integration that records at `save_times` and stores checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn forward_pass(
    gen: &LindbladGenerator,
    theta: &[f64],
    rho0: &CMat,
    t0: f64,
    tn: f64,
    save_times: &[f64],
    checkpoint_spacing: f64,
    solver: SolverConfig,
    recording: &Recording,
) -> Result<(Trajectory, CheckpointStore)> {
    if !(checkpoint_spacing > 0.0) {
        return Err(Error::invalid("checkpoint spacing must be positive"));
    }
    let counter = MatrixCounter::new();
    let times = checkpoint_times(t0, tn, checkpoint_spacing);
    let (mut traj, kept, forward_steps) =
        run_forward(gen, theta, rho0, t0, tn, save_times, &times, solver, recording, &counter)?;
    traj.final_state = None;
    let states = kept.into_iter().map(|(_, s)| s).collect();
    Ok((traj, CheckpointStore { times, forward_steps, states, counter }))
}

/// Cost value, adjoint seeds and the direct parameter partials.
#[derive(Clone, Debug)]
pub struct AdjointSeeds {
    pub evaluation: CostEvaluation,
}

impl AdjointSeeds {
    pub fn cost(&self) -> f64 {
        self.evaluation.total
    }

    /// Kick matrix `∂C/∂ρ(t_i)` of trajectory `k` at save index `i`.
    pub fn kick_matrix(
        &self,
        gen: &LindbladGenerator,
        observables: &[Observable],
        save_times: &[f64],
        k: usize,
        i: usize,
    ) -> CMat {
        let framed: Vec<FramedOperator> = observables.iter().map(|o| gen.frame_observable(o)).collect();
        let mut out = CMat::zeros(gen.dim(), gen.dim());
        for kick in self.evaluation.kicks[k].iter().filter(|q| q.save_index == i) {
            framed[kick.record].add_kick(save_times[i], kick.coef, &mut out);
        }
        out
    }
}

/// Evaluates the cost on forward trajectories and derives the adjoint seeds.
pub fn seed_adjoint(
    cost: &CostSpec,
    gen: &LindbladGenerator,
    trajectories: &[Trajectory],
    theta: &[f64],
) -> Result<AdjointSeeds> {
    Ok(AdjointSeeds { evaluation: cost.evaluate(gen, trajectories, theta)? })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BackwardDiagnostics {
    /// Peak simultaneously live N×N matrices during the backward pass.
    pub peak_live_matrices: usize,
    pub checkpoints: usize,
    pub steps: usize,
    /// Largest `‖ρ_replayed − ρ_stored‖_F` seen before a restore.
    pub max_restore_mismatch: f64,
    pub restore_mismatches: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BackwardResult {
    /// `∫ Re Tr[φ†(∂θ𝓛)ρ] dt` (the direct part is added by the caller).
    pub gradient: Vec<f64>,
    /// `φ(t₀)`
    pub adjoint_initial: CMat,
    pub diagnostics: BackwardDiagnostics,
}

/// Reverse-time co-integrator of `(ρ, φ)` with gradient accumulation.
struct Backward<'g> {
    gen: &'g LindbladGenerator,
    theta: &'g [f64],
    solver: SolverConfig,
    ops: InstantOps,
    kraus: Option<KrausScratch>,
    dp: Option<Dp45>,
    steps: usize,
}

impl<'g> Backward<'g> {
    fn new(gen: &'g LindbladGenerator, theta: &'g [f64], solver: SolverConfig, counter: &MatrixCounter) -> Self {
        let n = gen.dim();
        let (kraus, dp) = match solver {
            SolverConfig::Rouchon2 { .. } => (Some(KrausScratch::new(counter, n)), None),
            SolverConfig::Dp45(cfg) => (
                None,
                Some(Dp45::new(cfg, vec![Rhs::Forward, Rhs::Adjoint], counter, n).with_quadrature(theta.len())),
            ),
        };
        Backward { gen, theta, solver, ops: gen.instant_ops(), kraus, dp, steps: 0 }
    }

    fn invalidate(&mut self) {
        if let Some(dp) = self.dp.as_mut() {
            dp.invalidate();
        }
    }

    /// Moves `(ρ, φ)` from `t_hi` down to `t_lo`.
    #[allow(clippy::too_many_arguments)]
    fn retreat(
        &mut self,
        rho: &mut TrackedMatrix,
        rho_new: &mut TrackedMatrix,
        phi: &mut TrackedMatrix,
        phi_new: &mut TrackedMatrix,
        t_hi: f64,
        t_lo: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if t_hi <= t_lo {
            return Ok(());
        }
        let (gen, theta) = (self.gen, self.theta);
        match self.solver {
            SolverConfig::Rouchon2 { dt } => {
                let n = kraus_steps(t_hi - t_lo, dt);
                let h = (t_hi - t_lo) / n as f64;
                let scratch = self.kraus.as_mut().unwrap();
                for i in 0..n {
                    let tm = t_hi - (i as f64 + 0.5) * h;
                    gen.update(tm, theta, &mut self.ops);
                    kraus_apply(&self.ops, -h, rho, rho_new, scratch);
                    renormalize(rho_new)?;
                    kraus_dual(&self.ops, h, phi, phi_new, scratch);
                    // Midpoint states in the now free scratch.
                    let [s1, s2, _] = &mut scratch.s;
                    copy_into(s1, rho);
                    axpy_re(s1, 1.0, rho_new);
                    copy_into(s2, phi);
                    axpy_re(s2, 1.0, phi_new);
                    gen.accumulate_param_gradient(&mut self.ops, theta, s2, s1, 0.25 * h, grad);
                    std::mem::swap(rho, rho_new);
                    std::mem::swap(phi, phi_new);
                }
                self.steps += n;
            }
            SolverConfig::Dp45(_) => {
                let dp = self.dp.as_mut().unwrap();
                let before = dp.steps;
                dp.advance(gen, theta, &mut self.ops, t_hi, t_lo, &mut [rho, phi], grad)?;
                self.steps += dp.steps - before;
                let _ = (rho_new, phi_new);
            }
        }
        Ok(())
    }
}

fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn frobenius_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Co-integrates `ρ` and `φ` from the last checkpoint back to the first.
///
/// `kicks` are this trajectory's seeds, indexing `save_times` and
/// `observables`. The checkpoints are consumed so their memory is released
/// as the replay passes them.
#[allow(clippy::too_many_arguments)]
pub fn backward_pass(
    gen: &LindbladGenerator,
    theta: &[f64],
    kicks: &[RecordKick],
    observables: &[Observable],
    save_times: &[f64],
    checkpoints: CheckpointStore,
    solver: SolverConfig,
) -> Result<BackwardResult> {
    gen.check_theta(theta)?;
    solver.validate()?;
    let CheckpointStore { times, states, counter, .. } = checkpoints;
    if times.is_empty() {
        return Err(Error::invalid("backward pass needs at least one checkpoint"));
    }
    let n_ckpt = times.len();
    counter.reset_peak();
    let framed: Vec<FramedOperator> = observables.iter().map(|o| gen.frame_observable(o)).collect();
    let mut by_save: BTreeMap<usize, Vec<&RecordKick>> = BTreeMap::new();
    for k in kicks {
        if k.save_index >= save_times.len() {
            return Err(Error::MissingRecord(format!("save index {}", k.save_index)));
        }
        if k.record >= framed.len() {
            return Err(Error::MissingRecord(format!("observable {}", k.record)));
        }
        by_save.entry(k.save_index).or_default().push(k);
    }
    let t0 = times[0];
    let tn = *times.last().unwrap();
    let mut events = merge_times(&[&[t0, tn], save_times, &times]);
    events.reverse();

    let n = gen.dim();
    let mut states: Vec<Option<TrackedMatrix>> = states.into_iter().map(Some).collect();
    let mut rho = states[n_ckpt - 1].take().unwrap();
    let mut rho_new = counter.zeros(n);
    let mut phi = counter.zeros(n);
    let mut phi_new = counter.zeros(n);
    let mut grad = vec![0.0; theta.len()];
    let mut back = Backward::new(gen, theta, solver, &counter);
    let mut diag = BackwardDiagnostics { checkpoints: n_ckpt, ..Default::default() };

    let apply_kicks = |te: f64, phi: &mut CMat| {
        for (&i, list) in by_save.range(..) {
            if same_time(save_times[i], te) {
                for k in list {
                    framed[k.record].add_kick(save_times[i], k.coef, phi);
                }
            }
        }
    };
    apply_kicks(tn, &mut phi);

    let mut ci = n_ckpt - 1;
    let mut ref_norm = frobenius(&rho);
    let mut t = tn;
    for &te in events.iter().skip(1) {
        back.retreat(&mut rho, &mut rho_new, &mut phi, &mut phi_new, t, te, &mut grad)?;
        t = te;
        if rho.iter().chain(phi.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite(format!("reverse-time state at t = {te} ns")));
        }
        let growth = frobenius(&rho) / ref_norm;
        if growth > DIVERGENCE_GROWTH {
            return Err(Error::ReverseDivergence { t: te, growth });
        }
        let mut changed = false;
        if ci > 0 && same_time(times[ci - 1], te) {
            ci -= 1;
            let stored = states[ci].take().unwrap();
            let mismatch = frobenius_diff(&rho, &stored);
            diag.restore_mismatches.push(mismatch);
            diag.max_restore_mismatch = diag.max_restore_mismatch.max(mismatch);
            copy_into(&mut rho, &stored);
            drop(stored);
            ref_norm = frobenius(&rho);
            changed = true;
        }
        if by_save.keys().any(|&i| same_time(save_times[i], te)) {
            apply_kicks(te, &mut phi);
            changed = true;
        }
        if changed {
            back.invalidate();
        }
    }
    diag.steps = back.steps;
    drop(back);
    drop(rho_new);
    drop(phi_new);
    drop(rho);
    diag.peak_live_matrices = counter.peak();
    Ok(BackwardResult { gradient: grad, adjoint_initial: phi.into_inner(), diagnostics: diag })
}

/// Reverse-time integration of `(ρ, φ)` over `[t_lo, t_hi]` without
/// checkpoints or kicks. Returns the accumulated gradient integral and the
/// states at `t_lo`.
pub fn propagate_backward(
    gen: &LindbladGenerator,
    theta: &[f64],
    solver: SolverConfig,
    rho_hi: &CMat,
    phi_hi: &CMat,
    t_lo: f64,
    t_hi: f64,
) -> Result<(Vec<f64>, CMat, CMat)> {
    gen.check_theta(theta)?;
    gen.check_state(rho_hi)?;
    gen.check_state(phi_hi)?;
    let counter = MatrixCounter::new();
    let n = gen.dim();
    let mut rho = counter.track(rho_hi.clone());
    let mut phi = counter.track(phi_hi.clone());
    let (mut rn, mut pn) = (counter.zeros(n), counter.zeros(n));
    let mut grad = vec![0.0; theta.len()];
    let mut back = Backward::new(gen, theta, solver, &counter);
    back.retreat(&mut rho, &mut rn, &mut phi, &mut pn, t_hi, t_lo, &mut grad)?;
    Ok((grad, rho.into_inner(), phi.into_inner()))
}

/// `dC/dT = Re Tr[φ(T)†𝓛(T, θ)ρ(T)]`
pub fn time_gradient(gen: &LindbladGenerator, theta: &[f64], phi_t: &CMat, rho_t: &CMat, t: f64) -> Result<f64> {
    let l = gen.apply_liouvillian(t, theta, rho_t)?;
    gen.check_state(phi_t)?;
    Ok(inner(phi_t, &l).re)
}

/// Everything needed to evaluate a cost and its gradient.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub name: String,
    pub generator: LindbladGenerator,
    pub initial_states: Vec<(String, CMat)>,
    pub observables: Vec<Observable>,
    pub save_times: Vec<f64>,
    pub t0: f64,
    pub tn: f64,
    pub cost: CostSpec,
    pub solver: SolverConfig,
    pub checkpoint_spacing: f64,
    pub theta0: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvaluationDiagnostics {
    pub peak_live_matrices: usize,
    pub checkpoints: usize,
    pub forward_steps: usize,
    pub backward_steps: usize,
    pub max_restore_mismatch: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub cost: f64,
    pub terms: Vec<TermValue>,
    /// `dC/dθ`, present when requested.
    pub gradient: Option<Vec<f64>>,
    pub trajectories: Vec<Trajectory>,
    pub diagnostics: EvaluationDiagnostics,
}

impl ControlProblem {
    pub fn recording(&self) -> Recording {
        Recording { observables: self.observables.clone(), store_states: false }
    }

    /// Forward trajectories for every initial state.
    pub fn simulate(&self, theta: &[f64]) -> Result<Vec<Trajectory>> {
        let rec = self.recording();
        self.initial_states
            .par_iter()
            .map(|(_, rho0)| {
                let counter = MatrixCounter::new();
                run_forward(&self.generator, theta, rho0, self.t0, self.tn, &self.save_times, &[], self.solver, &rec, &counter)
                    .map(|r| r.0)
            })
            .collect()
    }

    pub fn cost_only(&self, theta: &[f64]) -> Result<Evaluation> {
        let trajectories = self.simulate(theta)?;
        let ev = self.cost.evaluate(&self.generator, &trajectories, theta)?;
        Ok(Evaluation {
            cost: ev.total,
            terms: ev.terms,
            gradient: None,
            trajectories,
            diagnostics: EvaluationDiagnostics::default(),
        })
    }

    /// Cost and adjoint gradient.
    pub fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let rec = self.recording();
        let forward: Vec<(Trajectory, CheckpointStore)> = self
            .initial_states
            .par_iter()
            .map(|(_, rho0)| {
                forward_pass(&self.generator, theta, rho0, self.t0, self.tn, &self.save_times, self.checkpoint_spacing, self.solver, &rec)
            })
            .collect::<Result<_>>()?;
        let (trajectories, stores): (Vec<Trajectory>, Vec<CheckpointStore>) = forward.into_iter().unzip();
        let forward_steps = stores.iter().map(|s| s.forward_steps).sum();
        let seeds = seed_adjoint(&self.cost, &self.generator, &trajectories, theta)?;
        let ev = seeds.evaluation;
        let results: Vec<BackwardResult> = stores
            .into_par_iter()
            .zip(ev.kicks.par_iter())
            .map(|(store, kicks)| {
                backward_pass(&self.generator, theta, kicks, &self.observables, &self.save_times, store, self.solver)
            })
            .collect::<Result<_>>()?;
        let mut grad = ev.direct_grad.clone();
        let mut diag = EvaluationDiagnostics { forward_steps, ..Default::default() };
        for r in &results {
            for (g, v) in grad.iter_mut().zip(&r.gradient) {
                *g += v;
            }
            diag.peak_live_matrices = diag.peak_live_matrices.max(r.diagnostics.peak_live_matrices);
            diag.checkpoints = diag.checkpoints.max(r.diagnostics.checkpoints);
            diag.backward_steps += r.diagnostics.steps;
            diag.max_restore_mismatch = diag.max_restore_mismatch.max(r.diagnostics.max_restore_mismatch);
        }
        if let Some(k) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component '{}'", self.generator.layout().names[k])));
        }
        Ok(Evaluation { cost: ev.total, terms: ev.terms, gradient: Some(grad), trajectories, diagnostics: diag })
    }

    /// Central finite differences of the cost with relative step `rel_step`.
    pub fn finite_difference(&self, theta: &[f64], rel_step: f64, indices: &[usize]) -> Result<Vec<f64>> {
        indices
            .iter()
            .map(|&k| {
                let h = rel_step * theta[k].abs().max(1.0);
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[k] += h;
                tm[k] -= h;
                Ok((self.cost_only(&tp)?.cost - self.cost_only(&tm)?.cost) / (2.0 * h))
            })
            .collect()
    }
}

/// Gradient report: parameter names to partials plus diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct GradientReport {
    pub cost: f64,
    /// Parameter name to partial, in parameter order.
    pub gradient: serde_json::Map<String, serde_json::Value>,
    pub diagnostics: EvaluationDiagnostics,
}

impl GradientReport {
    pub fn new(problem: &ControlProblem, ev: &Evaluation) -> Self {
        let names = &problem.generator.layout().names;
        let gradient = ev
            .gradient
            .as_ref()
            .map(|g| names.iter().cloned().zip(g.iter().map(|&v| serde_json::Value::from(v))).collect())
            .unwrap_or_default();
        GradientReport { cost: ev.cost, gradient, diagnostics: ev.diagnostics.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

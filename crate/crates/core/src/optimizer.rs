// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Adam over real parameter vectors, and the epoch loop that drives it.

use serde::Serialize;

use crate::adjoint::ControlProblem;
use crate::costs::TermValue;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdamConfig {
    /// Step size in parameter units (rad/ns for pixel amplitudes).
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("Adam learning rate must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("Adam β1, β2 must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("Adam ε must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 })
    }
}

/// One bias-corrected Adam update of `theta` in place.
///
/// A non-finite gradient leaves both `theta` and `state` untouched.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState) -> Result<()> {
    let n = state.m.len();
    if theta.len() != n || grad.len() != n {
        return Err(Error::DimensionMismatch {
            context: "adam_step".into(),
            expected: n,
            got: if theta.len() != n { theta.len() } else { grad.len() },
        });
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {k} = {} at Adam step {}", grad[k], state.step + 1)));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let b1t = 1.0 - beta1.powi(state.step as i32);
    let b2t = 1.0 - beta2.powi(state.step as i32);
    for k in 0..n {
        let g = grad[k];
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
        let mh = state.m[k] / b1t;
        let vh = state.v[k] / b2t;
        theta[k] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// Cost (and optionally gradient) of a parameter vector.
pub trait Objective {
    fn n_params(&self) -> usize;
    fn term_names(&self) -> Vec<String>;
    fn evaluate(&self, theta: &[f64], with_gradient: bool) -> Result<ObjectiveValue>;
}

#[derive(Clone, Debug)]
pub struct ObjectiveValue {
    pub cost: f64,
    /// Unweighted term values, in `term_names` order.
    pub terms: Vec<f64>,
    pub gradient: Option<Vec<f64>>,
    /// Largest live-matrix count seen while evaluating.
    pub peak_live_matrices: usize,
}

impl Objective for ControlProblem {
    fn n_params(&self) -> usize {
        self.generator.n_params()
    }

    fn term_names(&self) -> Vec<String> {
        self.cost.terms.iter().map(|t| t.name.clone()).collect()
    }

    fn evaluate(&self, theta: &[f64], with_gradient: bool) -> Result<ObjectiveValue> {
        let ev = if with_gradient { ControlProblem::evaluate(self, theta)? } else { self.cost_only(theta)? };
        Ok(ObjectiveValue {
            cost: ev.cost,
            terms: ev.terms.iter().map(|t: &TermValue| t.value).collect(),
            gradient: ev.gradient,
            peak_live_matrices: ev.diagnostics.peak_live_matrices,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub terms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub best_theta: Vec<f64>,
    pub best_cost: f64,
    pub best_epoch: usize,
    pub final_theta: Vec<f64>,
    /// `epochs + 1` rows; row 0 is the seed.
    pub log: Vec<EpochRecord>,
    pub term_names: Vec<String>,
    pub peak_live_matrices: usize,
}

impl OptimizationResult {
    pub fn csv_rows(&self) -> Vec<(usize, f64, Vec<f64>)> {
        self.log.iter().map(|r| (r.epoch, r.total, r.terms.clone())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizeConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
}

/// Runs `epochs` Adam steps from `seed`.
///
/// `on_epoch` sees every log row together with the parameters it was
/// evaluated at; errors it returns abort the run.
pub fn run_optimization<O: Objective + ?Sized>(
    objective: &O,
    seed: &[f64],
    config: OptimizeConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &[f64]) -> Result<()>,
) -> Result<OptimizationResult> {
    if seed.len() != objective.n_params() {
        return Err(Error::DimensionMismatch {
            context: "optimization seed".into(),
            expected: objective.n_params(),
            got: seed.len(),
        });
    }
    let wrap = |epoch: usize| move |e: Error| Error::Epoch { epoch, source: Box::new(e) };
    let mut state = OptimizerState::new(seed.len(), config.adam)?;
    let mut theta = seed.to_vec();
    let mut log = Vec::with_capacity(config.epochs + 1);
    let mut peak = 0;

    let mut value = objective.evaluate(&theta, config.epochs > 0).map_err(wrap(0))?;
    let mut best = (theta.clone(), value.cost, 0);
    for epoch in 0..=config.epochs {
        if !value.cost.is_finite() {
            return Err(wrap(epoch)(Error::NonFinite(format!("cost = {}", value.cost))));
        }
        peak = peak.max(value.peak_live_matrices);
        let row = EpochRecord { epoch, total: value.cost, terms: value.terms.clone() };
        on_epoch(&row, &theta).map_err(wrap(epoch))?;
        log.push(row);
        if value.cost < best.1 {
            best = (theta.clone(), value.cost, epoch);
        }
        if epoch == config.epochs {
            break;
        }
        let grad = value
            .gradient
            .take()
            .ok_or_else(|| wrap(epoch)(Error::invalid("objective returned no gradient")))?;
        adam_step(&mut theta, &grad, &mut state).map_err(wrap(epoch))?;
        value = objective.evaluate(&theta, epoch + 1 < config.epochs).map_err(wrap(epoch + 1))?;
    }
    Ok(OptimizationResult {
        best_theta: best.0,
        best_cost: best.1,
        best_epoch: best.2,
        final_theta: theta,
        log,
        term_names: objective.term_names(),
        peak_live_matrices: peak,
    })
}

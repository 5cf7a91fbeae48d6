// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

use openqoc_core::costs::{assignment_error, snr, snr_curve, CostKind};
use openqoc_core::models::{
    build_readout_problem, build_reset_problem, calibrate_reset_flat, validate_truncation_with, CalibrationPoint,
    ReadoutProblem, ResetProblem, SystemSpec,
};
use openqoc_core::optimizer::{run_optimization, Objective};
use openqoc_core::units::{mhz, to_ghz, to_mhz};
use openqoc_core::{ControlProblem, Evaluation, GradientReport, Trajectory};
use rand::{Rng, SeedableRng};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, Command, RunConfig, DEFAULT_MEMORY_CAP_MB};
use crate::error::Failure;
use crate::output::OutDir;

pub struct Run {
    pub cfg: RunConfig,
    pub out: OutDir,
    pub peak_live_matrices: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Readout,
    Reset,
}

enum Built {
    Readout(ReadoutProblem),
    Reset(ResetProblem),
}

impl Built {
    fn problem(&self) -> &ControlProblem {
        match self {
            Built::Readout(p) => &p.problem,
            Built::Reset(p) => &p.problem,
        }
    }

    fn problem_mut(&mut self) -> &mut ControlProblem {
        match self {
            Built::Readout(p) => &mut p.problem,
            Built::Reset(p) => &mut p.problem,
        }
    }
}

fn kind_for(cfg: &RunConfig, command: Command) -> Kind {
    match command {
        Command::OptimizeReadout => Kind::Readout,
        Command::OptimizeReset | Command::CalibrateReset => Kind::Reset,
        _ if cfg.readout.is_some() => Kind::Readout,
        _ => Kind::Reset,
    }
}

fn build(cfg: &RunConfig, spec: &SystemSpec, kind: Kind) -> Result<Built, Failure> {
    let mut built = match kind {
        Kind::Readout => Built::Readout(build_readout_problem(spec, &cfg.readout_config().expect("validated"))?),
        Kind::Reset => Built::Reset(build_reset_problem(spec, &cfg.reset_config().expect("validated"))?),
    };
    apply_weights(built.problem_mut(), cfg)?;
    Ok(built)
}

fn apply_weights(p: &mut ControlProblem, cfg: &RunConfig) -> Result<(), Failure> {
    for (name, &w) in &cfg.weights {
        let have: Vec<String> = p.cost.terms.iter().map(|t| t.name.clone()).collect();
        let term = p.cost.terms.iter_mut().find(|t| &t.name == name).ok_or_else(|| {
            Failure::Config(format!("weights.{name}: no such cost term (have {})", have.join(", ")))
        })?;
        term.weight = w;
    }
    Ok(())
}

fn seed(cfg: &RunConfig, built: &Built) -> Result<Vec<f64>, Failure> {
    let mut theta = match built {
        Built::Readout(p) => config::readout_seed(cfg, p)?,
        Built::Reset(p) => config::reset_seed(cfg, p)?,
    };
    if cfg.seed.jitter > 0.0 {
        let scale = theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.rng_seed.expect("validated"));
        for v in &mut theta {
            *v += cfg.seed.jitter * scale * rng.random_range(-1.0..=1.0);
        }
    }
    Ok(theta)
}

#[derive(Serialize)]
struct Term {
    name: String,
    weight: f64,
    value: f64,
}

fn terms(ev: &Evaluation) -> Vec<Term> {
    ev.terms.iter().map(|t| Term { name: t.name.clone(), weight: t.weight, value: t.value }).collect()
}

#[derive(Serialize)]
struct ReadoutMetrics {
    record: String,
    tau_ns: f64,
    snr: f64,
    assignment_error: f64,
    /// `[τ_ns, SNR(τ)]` on the record grid.
    snr_curve: Vec<[f64; 2]>,
}

fn readout_metrics(p: &ControlProblem, trajs: &[Trajectory], t1: f64) -> Result<Vec<ReadoutMetrics>, Failure> {
    let mut out = Vec::new();
    for term in &p.cost.terms {
        if let CostKind::InverseSnr { record, ground, excited, eta, kappa } = &term.kind {
            let bg = trajs[*ground].record(record)?;
            let be = trajs[*excited].record(record)?;
            let tau = p.cost.tau_m;
            let s = snr(bg, be, *eta, *kappa, tau, p.cost.bin)?;
            out.push(ReadoutMetrics {
                record: record.clone(),
                tau_ns: tau,
                snr: s,
                assignment_error: assignment_error(s, tau, t1)?,
                snr_curve: snr_curve(bg, be, *eta, *kappa, p.cost.bin).into_iter().map(|(t, v)| [t, v]).collect(),
            });
        }
    }
    Ok(out)
}

/// Last sample of every record, per trajectory.
fn final_records(p: &ControlProblem, trajs: &[Trajectory]) -> Value {
    let mut m = serde_json::Map::new();
    for ((name, _), t) in p.initial_states.iter().zip(trajs) {
        let recs: serde_json::Map<String, Value> = t
            .records
            .iter()
            .filter_map(|(r, v)| v.last().map(|x| (r.clone(), json!([x.re, x.im]))))
            .collect();
        m.insert(name.clone(), Value::Object(recs));
    }
    Value::Object(m)
}

fn write_pulses(out: &mut OutDir, p: &ControlProblem, theta: &[f64], prefix: &str) -> Result<(), Failure> {
    let gen = &p.generator;
    for (k, d) in gen.drives().iter().enumerate() {
        let pulse = gen.layout().pulse(gen.drives(), theta, k);
        out.write(&format!("{prefix}{}.json", d.name), pulse.to_file().to_json()?.as_bytes())?;
    }
    Ok(())
}

fn write_trajectories(out: &mut OutDir, p: &ControlProblem, trajs: &[Trajectory]) -> Result<(), Failure> {
    for ((name, _), t) in p.initial_states.iter().zip(trajs) {
        out.write_with(&format!("trajectory_{name}.csv"), |w| t.write_csv(w))?;
    }
    Ok(())
}

pub fn simulate(run: &mut Run) -> Result<(), Failure> {
    let cfg = &run.cfg;
    let built = build(cfg, &cfg.system, kind_for(cfg, Command::Simulate))?;
    let p = built.problem();
    let theta = seed(cfg, &built)?;
    let ev = p.cost_only(&theta)?;
    write_trajectories(&mut run.out, p, &ev.trajectories)?;
    write_pulses(&mut run.out, p, &theta, "pulse_")?;
    let summary = json!({
        "problem": p.name,
        "cost": ev.cost,
        "terms": terms(&ev),
        "readout": readout_metrics(p, &ev.trajectories, cfg.system.t1())?,
        "final_records": final_records(p, &ev.trajectories),
    });
    run.out.write_json("summary.json", &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct GradCheckEntry {
    name: String,
    adjoint: f64,
    finite_difference: f64,
    /// `|adjoint − fd| / |fd|`; absent when `|fd|` is below the floor.
    relative_error: Option<f64>,
}

#[derive(Serialize)]
struct GradCheckReport {
    dim: usize,
    rel_step: f64,
    tolerance: f64,
    floor: f64,
    passed: bool,
    max_relative_error: f64,
    error: Option<String>,
    parameters: Vec<GradCheckEntry>,
}

pub fn grad_check(run: &mut Run) -> Result<(), Failure> {
    let cfg = &run.cfg;
    let gc = cfg.grad_check.clone();
    let built = build(cfg, &cfg.system, kind_for(cfg, Command::GradCheck))?;
    let p = built.problem();
    let dim = p.generator.dim();
    if dim > gc.max_dim {
        return Err(Failure::Cap(format!("grad-check needs dim ≤ {}, system has {dim}", gc.max_dim)));
    }
    let theta = seed(cfg, &built)?;
    let mut report = GradCheckReport {
        dim,
        rel_step: gc.rel_step,
        tolerance: gc.tolerance,
        floor: gc.floor,
        passed: false,
        max_relative_error: 0.0,
        error: None,
        parameters: Vec::new(),
    };
    let checked = (|| -> openqoc_core::Result<Evaluation> {
        let ev = p.evaluate(&theta)?;
        let all: Vec<usize> = (0..theta.len()).collect();
        let fd = p.finite_difference(&theta, gc.rel_step, &all)?;
        let names = &p.generator.layout().names;
        for ((name, &a), &f) in names.iter().zip(ev.gradient.as_deref().unwrap_or_default()).zip(&fd) {
            if !f.is_finite() {
                return Err(openqoc_core::Error::NonFinite(format!("finite difference for '{name}'")));
            }
            let rel = (f.abs() > gc.floor).then(|| (a - f).abs() / f.abs());
            report.parameters.push(GradCheckEntry { name: name.clone(), adjoint: a, finite_difference: f, relative_error: rel });
        }
        Ok(ev)
    })();
    let result = match checked {
        Ok(ev) => {
            run.peak_live_matrices = ev.diagnostics.peak_live_matrices;
            run.out.write("gradient.json", GradientReport::new(p, &ev).to_json()?.as_bytes())?;
            report.max_relative_error =
                report.parameters.iter().filter_map(|e| e.relative_error).fold(0.0, f64::max);
            report.passed = report.max_relative_error <= gc.tolerance;
            if report.passed {
                Ok(())
            } else {
                Err(Failure::Numerical(format!(
                    "gradient check failed: max relative error {:.3e} > {:.1e}",
                    report.max_relative_error, gc.tolerance
                )))
            }
        }
        Err(e) => {
            report.error = Some(e.to_string());
            Err(Failure::Numerical(format!("gradient check failed: {e}")))
        }
    };
    run.out.write_json("grad_check.json", &report)?;
    result
}

fn validation(run: &mut Run, kind: Kind, theta: &[f64]) -> Result<(), Failure> {
    let cfg = &run.cfg;
    let cap = cfg.validation.memory_cap_mb.unwrap_or(DEFAULT_MEMORY_CAP_MB) * 1024 * 1024;
    let report = validate_truncation_with(
        &cfg.system,
        |s| build(cfg, s, kind).map(|b| b.problem().clone()).map_err(|f| match f {
            Failure::Numerical(m) => openqoc_core::Error::NonFinite(m),
            f => openqoc_core::Error::InvalidArgument(f.message().to_string()),
        }),
        theta,
        cfg.enlarged_dims(),
        cap,
    );
    match report {
        Ok(r) => Ok(run.out.write_json("validation.json", &r)?),
        Err(e) => {
            let f = Failure::from(e);
            run.out.write_json("validation.json", &json!({ "error": f.to_string() }))?;
            Err(f)
        }
    }
}

pub fn validate(run: &mut Run) -> Result<(), Failure> {
    let kind = kind_for(&run.cfg, Command::Validate);
    let built = build(&run.cfg, &run.cfg.system, kind)?;
    let theta = seed(&run.cfg, &built)?;
    validation(run, kind, &theta)
}

pub fn optimize(run: &mut Run, command: Command) -> Result<(), Failure> {
    let kind = kind_for(&run.cfg, command);
    let built = build(&run.cfg, &run.cfg.system, kind)?;
    let p = built.problem();
    let theta0 = seed(&run.cfg, &built)?;
    let names = p.term_names();
    let mut log = run.out.incremental("epochs.csv")?;
    log.line(&format!("epoch,total,{}", names.join(",")))?;
    let mut io_error = None;
    let result = run_optimization(p, &theta0, run.cfg.optimize_config(), |row, _| {
        let mut line = format!("{},{}", row.epoch, row.total);
        for v in &row.terms {
            line.push_str(&format!(",{v}"));
        }
        if let Err(e) = log.line(&line) {
            io_error = Some(e.to_string());
            return Err(openqoc_core::Error::InvalidArgument("epoch log write failed".into()));
        }
        Ok(())
    });
    log.finish(&mut run.out)?;
    if let Some(e) = io_error {
        return Err(Failure::Config(format!("i/o: {e}")));
    }
    let result = result?;
    run.peak_live_matrices = result.peak_live_matrices;
    write_pulses(&mut run.out, p, &result.best_theta, "pulse_")?;
    let seed_ev = p.cost_only(&theta0)?;
    let best_ev = p.cost_only(&result.best_theta)?;
    let t1 = run.cfg.system.t1();
    let summary = json!({
        "problem": p.name,
        "epochs": result.log.len() - 1,
        "best_epoch": result.best_epoch,
        "seed": { "cost": seed_ev.cost, "terms": terms(&seed_ev), "readout": readout_metrics(p, &seed_ev.trajectories, t1)? },
        "best": { "cost": best_ev.cost, "terms": terms(&best_ev), "readout": readout_metrics(p, &best_ev.trajectories, t1)? },
        "parameters": p.generator.layout().names.iter().cloned().zip(result.best_theta.iter().map(|&v| json!(v))).collect::<serde_json::Map<_, _>>(),
    });
    run.out.write_json("summary.json", &summary)?;
    if run.cfg.validation.skip {
        return Ok(());
    }
    validation(run, kind, &result.best_theta)
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct CalibrationRow {
    omega_f0g1_amp_MHz: f64,
    omega_f0g1_GHz: f64,
    omega_ef_GHz: f64,
    omega_ef_amp_MHz: f64,
    g_tilde_MHz: f64,
    residual: [f64; 3],
    reset_cost: f64,
}

pub fn calibrate_reset(run: &mut Run) -> Result<(), Failure> {
    let cfg = run.cfg.clone();
    let amps: Vec<f64> = cfg.calibration.amplitudes_mhz.iter().map(|&a| mhz(a)).collect();
    let points: Vec<CalibrationPoint> = calibrate_reset_flat(&cfg.system, &amps, &cfg.calibration_config())?;
    let Built::Reset(base) = build(&cfg, &cfg.system, Kind::Reset)? else { unreachable!() };
    let mut rows = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (i, pt) in points.iter().enumerate() {
        for s in &pt.sweeps {
            run.out.write_with(&format!("sweep_{i}_{}.csv", s.name), |w| s.write_csv(w))?;
        }
        // Evaluate the calibrated flat pulse inside the configured problem,
        // with the calibrated carriers expressed as detunings.
        let mut rc = cfg.reset_config().expect("validated");
        rc.omega_f0g1 = Some(pt.omega_f0g1);
        rc.omega_ef = Some(pt.omega_ef);
        let mut p = build_reset_problem(&cfg.system, &rc)?;
        apply_weights(&mut p.problem, &cfg)?;
        let ev = p.problem.cost_only(&p.flat_seed([pt.omega_f0g1_amp, pt.omega_ef_amp])?)?;
        rows.push(CalibrationRow {
            omega_f0g1_amp_MHz: to_mhz(pt.omega_f0g1_amp),
            omega_f0g1_GHz: to_ghz(pt.omega_f0g1),
            omega_ef_GHz: to_ghz(pt.omega_ef),
            omega_ef_amp_MHz: to_mhz(pt.omega_ef_amp),
            g_tilde_MHz: to_mhz(pt.g_tilde),
            residual: pt.residual,
            reset_cost: ev.cost,
        });
        if best.as_ref().is_none_or(|b| ev.cost < b.0) {
            let mut theta = base.flat_seed([pt.omega_f0g1_amp, pt.omega_ef_amp])?;
            let layout = base.problem.generator.layout();
            for (k, carrier) in [pt.omega_f0g1, pt.omega_ef].into_iter().enumerate() {
                let offset = carrier - base.carriers[k];
                match layout.drives[k].detuning {
                    Some(j) => theta[j] = offset,
                    None if offset != 0.0 => {
                        return Err(Failure::Config(
                            "reset.optimize_detuning must be true to express calibrated carriers as pulse seeds".into(),
                        ))
                    }
                    None => {}
                }
            }
            best = Some((ev.cost, theta));
        }
    }
    let (best_cost, theta) = best.expect("at least one amplitude");
    write_pulses(&mut run.out, &base.problem, &theta, "seed_")?;
    let best_index = rows.iter().position(|r| r.reset_cost == best_cost).unwrap_or(0);
    run.out.write_json("calibration.json", &json!({ "points": rows, "best": best_index }))?;
    Ok(())
}

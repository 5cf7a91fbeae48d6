// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Run configuration. Field names carry their units; everything is
//! converted to rad/ns once, in this module.

use std::path::{Path, PathBuf};

use openqoc_core::controls::{PixelPulse, PulseFile};
use openqoc_core::lindblad::{Dp45Config, SolverConfig};
use openqoc_core::models::{
    CalibrationConfig, Numerics, ReadoutConfig, ReadoutProblem, ResetConfig, ResetProblem, SystemSpec,
};
use openqoc_core::optimizer::{AdamConfig, OptimizeConfig};
use openqoc_core::units::{ghz, mhz};
use serde::{Deserialize, Serialize};

use crate::error::Failure;

/// Readout seed photon number when none is configured.
pub const DEFAULT_FLAT_PHOTONS: f64 = 0.25;

/// Truncation-check memory cap when none is configured.
pub const DEFAULT_MEMORY_CAP_MB: u64 = 4096;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(path: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{path}: {msg}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    GradCheck,
    OptimizeReadout,
    OptimizeReset,
    CalibrateReset,
    Validate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must match the subcommand when given.
    #[serde(default)]
    pub command: Option<Command>,
    pub system: SystemSpec,
    #[serde(default)]
    pub readout: Option<ReadoutSection>,
    #[serde(default)]
    pub reset: Option<ResetSection>,
    #[serde(default)]
    pub seed: SeedSection,
    /// Cost-term weight overrides by term name.
    #[serde(default)]
    pub weights: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub grad_check: GradCheckSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub rng_seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    pub tau_ns: f64,
    #[serde(default, rename = "filter_carrier_GHz")]
    pub filter_carrier_ghz: Option<f64>,
    #[serde(default, rename = "transmon_drive_GHz")]
    pub transmon_drive_ghz: Option<f64>,
    #[serde(default = "yes")]
    pub optimize_detuning: bool,
    #[serde(default = "some3")]
    pub forbidden_transmon: Option<usize>,
    #[serde(default = "some2")]
    pub forbidden_undriven: Option<usize>,
    #[serde(default)]
    pub n_crit: Option<f64>,
    #[serde(default = "omega_max_readout", rename = "omega_max_MHz")]
    pub omega_max_mhz: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetSection {
    pub tau_ns: f64,
    #[serde(default, rename = "omega_f0g1_GHz")]
    pub omega_f0g1_ghz: Option<f64>,
    #[serde(default, rename = "omega_ef_GHz")]
    pub omega_ef_ghz: Option<f64>,
    #[serde(default = "yes")]
    pub optimize_detuning: bool,
    #[serde(default = "yes")]
    pub squared_population: bool,
    #[serde(default = "omega_max_reset", rename = "omega_max_MHz")]
    pub omega_max_mhz: f64,
    #[serde(default = "reset_weights")]
    pub weights: [f64; 3],
}

/// Initial pulses: flat readout at a photon number, flat reset amplitudes,
/// or one pulse file per drive.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    #[serde(default)]
    pub flat_photons: Option<f64>,
    #[serde(default, rename = "flat_MHz")]
    pub flat_mhz: Option<Vec<f64>>,
    #[serde(default)]
    pub pulse_files: Option<Vec<PathBuf>>,
    /// Each parameter moves by up to `jitter` times the largest seed
    /// magnitude, uniformly at random from `rng_seed`.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum SolverSection {
    Rouchon2 {
        dt_ns: f64,
        #[serde(default = "spacing")]
        checkpoint_spacing_ns: f64,
    },
    Dp45 {
        tol: f64,
        #[serde(default = "dp_dt_init")]
        dt_init_ns: f64,
        #[serde(default = "dp_dt_max")]
        dt_max_ns: f64,
        #[serde(default = "dp_dt_min")]
        dt_min_ns: f64,
        #[serde(default = "spacing")]
        checkpoint_spacing_ns: f64,
    },
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection::Rouchon2 { dt_ns: 0.01, checkpoint_spacing_ns: spacing() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerSection { epochs: 100, lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    #[serde(rename = "amplitudes_MHz")]
    pub amplitudes_mhz: Vec<f64>,
    pub points: usize,
    #[serde(rename = "f0g1_half_width_MHz")]
    pub f0g1_half_width_mhz: f64,
    #[serde(rename = "ef_half_width_MHz")]
    pub ef_half_width_mhz: f64,
    pub amplitude_rel_half_width: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        CalibrationSection {
            amplitudes_mhz: vec![200.0, 350.0, 500.0],
            points: c.points,
            f0g1_half_width_mhz: openqoc_core::units::to_mhz(c.f0g1_half_width),
            ef_half_width_mhz: openqoc_core::units::to_mhz(c.ef_half_width),
            amplitude_rel_half_width: c.amplitude_rel_half_width,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    /// Defaults to one more transmon level and one more photon per mode.
    #[serde(default)]
    pub enlarged_dims: Option<[usize; 3]>,
    #[serde(default, rename = "memory_cap_MB")]
    pub memory_cap_mb: Option<u64>,
    /// Skip the truncation check after optimizing.
    #[serde(default)]
    pub skip: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckSection {
    pub rel_step: f64,
    pub tolerance: f64,
    /// Components with `|finite difference|` below this are not compared.
    pub floor: f64,
    pub max_dim: usize,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        GradCheckSection { rel_step: 1e-5, tolerance: 1e-4, floor: 1e-8, max_dim: 64 }
    }
}

fn yes() -> bool {
    true
}
fn some2() -> Option<usize> {
    Some(2)
}
fn some3() -> Option<usize> {
    Some(3)
}
fn omega_max_readout() -> f64 {
    200.0
}
fn omega_max_reset() -> f64 {
    600.0
}
fn reset_weights() -> [f64; 3] {
    [0.3, 1.0, 0.3]
}
fn spacing() -> f64 {
    5.0
}
fn dp_dt_init() -> f64 {
    Dp45Config::default().dt_init
}
fn dp_dt_max() -> f64 {
    Dp45Config::default().dt_max
}
fn dp_dt_min() -> f64 {
    Dp45Config::default().dt_min
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(path, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    /// Checks everything that does not need a built problem. Relative
    /// pulse paths are resolved against `base`.
    pub fn validate(&mut self, command: Command, base: &Path) -> Result<(), ConfigError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(bad("command", format!("config is for {c:?}, invoked as {command:?}")));
            }
        }
        self.system.validate().map_err(|e| bad("system", e))?;
        let needs_rng = matches!(command, Command::OptimizeReadout | Command::OptimizeReset);
        if needs_rng && self.rng_seed.is_none() {
            return Err(bad("rng_seed", "required for optimize commands"));
        }
        match command {
            Command::OptimizeReadout if self.readout.is_none() => return Err(bad("readout", "section required")),
            Command::OptimizeReset | Command::CalibrateReset if self.reset.is_none() => {
                return Err(bad("reset", "section required"))
            }
            Command::Simulate | Command::GradCheck | Command::Validate
                if self.readout.is_some() == self.reset.is_some() =>
            {
                return Err(bad("readout/reset", "exactly one of the two sections is required"))
            }
            _ => {}
        }
        if let Some(r) = &self.readout {
            positive("readout.tau_ns", r.tau_ns)?;
            positive("readout.omega_max_MHz", r.omega_max_mhz)?;
            for (p, v) in [("readout.filter_carrier_GHz", r.filter_carrier_ghz), ("readout.transmon_drive_GHz", r.transmon_drive_ghz), ("readout.n_crit", r.n_crit)] {
                if let Some(v) = v {
                    positive(p, v)?;
                }
            }
        }
        if let Some(r) = &self.reset {
            positive("reset.tau_ns", r.tau_ns)?;
            positive("reset.omega_max_MHz", r.omega_max_mhz)?;
            for (p, v) in [("reset.omega_f0g1_GHz", r.omega_f0g1_ghz), ("reset.omega_ef_GHz", r.omega_ef_ghz)] {
                if let Some(v) = v {
                    positive(p, v)?;
                }
            }
            if r.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return Err(bad("reset.weights", "must be finite and non-negative"));
            }
        }
        for (name, w) in &self.weights {
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(bad(&format!("weights.{name}"), "must be finite and non-negative"));
            }
        }
        let s = &self.seed;
        let given = [s.flat_photons.is_some(), s.flat_mhz.is_some(), s.pulse_files.is_some()];
        if given.iter().filter(|&&g| g).count() > 1 {
            return Err(bad("seed", "give at most one of flat_photons, flat_MHz, pulse_files"));
        }
        if let Some(n) = s.flat_photons {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(bad("seed.flat_photons", "must be finite and non-negative"));
            }
        }
        if let Some(a) = &s.flat_mhz {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(bad("seed.flat_MHz", "must be finite"));
            }
        }
        if !(s.jitter >= 0.0 && s.jitter.is_finite()) {
            return Err(bad("seed.jitter", "must be finite and non-negative"));
        }
        if s.jitter > 0.0 && self.rng_seed.is_none() {
            return Err(bad("rng_seed", "required when seed.jitter is set"));
        }
        if let Some(files) = &mut self.seed.pulse_files {
            for (k, f) in files.iter_mut().enumerate() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
                if !f.is_file() {
                    return Err(bad(&format!("seed.pulse_files[{k}]"), format!("{} does not exist", f.display())));
                }
            }
        }
        match &self.solver {
            SolverSection::Rouchon2 { dt_ns, checkpoint_spacing_ns } => {
                positive("solver.dt_ns", *dt_ns)?;
                positive("solver.checkpoint_spacing_ns", *checkpoint_spacing_ns)?;
            }
            SolverSection::Dp45 { tol, dt_init_ns, dt_max_ns, dt_min_ns, checkpoint_spacing_ns } => {
                positive("solver.tol", *tol)?;
                positive("solver.dt_init_ns", *dt_init_ns)?;
                positive("solver.dt_max_ns", *dt_max_ns)?;
                positive("solver.dt_min_ns", *dt_min_ns)?;
                positive("solver.checkpoint_spacing_ns", *checkpoint_spacing_ns)?;
            }
        }
        self.optimize_config().adam.validate().map_err(|e| bad("optimizer", e))?;
        let c = &self.calibration;
        if c.amplitudes_mhz.is_empty() {
            return Err(bad("calibration.amplitudes_MHz", "must not be empty"));
        }
        for a in &c.amplitudes_mhz {
            positive("calibration.amplitudes_MHz", *a)?;
        }
        positive("calibration.f0g1_half_width_MHz", c.f0g1_half_width_mhz)?;
        positive("calibration.ef_half_width_MHz", c.ef_half_width_mhz)?;
        positive("calibration.amplitude_rel_half_width", c.amplitude_rel_half_width)?;
        if c.points < 3 {
            return Err(bad("calibration.points", "must be at least 3"));
        }
        let g = &self.grad_check;
        positive("grad_check.rel_step", g.rel_step)?;
        positive("grad_check.tolerance", g.tolerance)?;
        if !(g.floor >= 0.0) {
            return Err(bad("grad_check.floor", "must be non-negative"));
        }
        Ok(())
    }

    pub fn numerics(&self) -> Numerics {
        match self.solver {
            SolverSection::Rouchon2 { dt_ns, checkpoint_spacing_ns } => {
                Numerics { solver: SolverConfig::Rouchon2 { dt: dt_ns }, checkpoint_spacing: checkpoint_spacing_ns }
            }
            SolverSection::Dp45 { tol, dt_init_ns, dt_max_ns, dt_min_ns, checkpoint_spacing_ns } => Numerics {
                solver: SolverConfig::Dp45(Dp45Config { tol, dt_init: dt_init_ns, dt_max: dt_max_ns, dt_min: dt_min_ns }),
                checkpoint_spacing: checkpoint_spacing_ns,
            },
        }
    }

    pub fn readout_config(&self) -> Option<ReadoutConfig> {
        let r = self.readout.as_ref()?;
        Some(ReadoutConfig {
            tau_m: r.tau_ns,
            transmon_drive: r.transmon_drive_ghz.map(ghz),
            filter_carrier: r.filter_carrier_ghz.map(ghz),
            optimize_detuning: r.optimize_detuning,
            forbidden_transmon: r.forbidden_transmon,
            forbidden_undriven: r.forbidden_undriven,
            n_crit: r.n_crit,
            omega_max: mhz(r.omega_max_mhz),
            numerics: self.numerics(),
        })
    }

    pub fn reset_config(&self) -> Option<ResetConfig> {
        let r = self.reset.as_ref()?;
        Some(ResetConfig {
            tau_m: r.tau_ns,
            omega_f0g1: r.omega_f0g1_ghz.map(ghz),
            omega_ef: r.omega_ef_ghz.map(ghz),
            optimize_detuning: r.optimize_detuning,
            squared_population: r.squared_population,
            omega_max: mhz(r.omega_max_mhz),
            weights: r.weights,
            numerics: self.numerics(),
        })
    }

    pub fn optimize_config(&self) -> OptimizeConfig {
        let o = &self.optimizer;
        OptimizeConfig {
            epochs: o.epochs,
            adam: AdamConfig { lr: o.lr, beta1: o.beta1, beta2: o.beta2, eps: o.eps },
        }
    }

    pub fn calibration_config(&self) -> CalibrationConfig {
        let c = &self.calibration;
        CalibrationConfig {
            probe_duration: self.reset.as_ref().map_or(CalibrationConfig::default().probe_duration, |r| r.tau_ns),
            f0g1_half_width: mhz(c.f0g1_half_width_mhz),
            ef_half_width: mhz(c.ef_half_width_mhz),
            amplitude_rel_half_width: c.amplitude_rel_half_width,
            points: c.points,
            numerics: self.numerics(),
        }
    }

    pub fn enlarged_dims(&self) -> [usize; 3] {
        let d = self.system.dims();
        self.validation.enlarged_dims.unwrap_or([d[0] + 1, d[1] + 1, d[2] + 1])
    }
}

/// Reads pulse files, one per drive.
pub fn read_pulses(files: &[PathBuf]) -> Result<Vec<PixelPulse>, ConfigError> {
    files
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let path = format!("seed.pulse_files[{k}]");
            let text = std::fs::read_to_string(f).map_err(|e| bad(&path, e))?;
            let pf = PulseFile::from_json(&text).map_err(|e| bad(&path, e))?;
            PixelPulse::from_file(&pf).map_err(|e| bad(&path, e))
        })
        .collect()
}

/// Seed parameters for a readout problem.
pub fn readout_seed(cfg: &RunConfig, p: &ReadoutProblem) -> Result<Vec<f64>, Failure> {
    let s = &cfg.seed;
    if let Some(files) = &s.pulse_files {
        return from_pulses(&p.problem.generator, &read_pulses(files)?);
    }
    if let Some(a) = &s.flat_mhz {
        let gen = &p.problem.generator;
        let mut theta = vec![0.0; gen.n_params()];
        if a.len() != gen.drives().len() {
            return Err(Failure::from(bad("seed.flat_MHz", format!("{} amplitudes for {} drives", a.len(), gen.drives().len()))));
        }
        for (k, &amp) in a.iter().enumerate() {
            let pixels = gen.drives()[k].n_pixels;
            gen.layout().set_pulse(&mut theta, k, &PixelPulse::flat(pixels, openqoc_core::linalg::c(mhz(amp), 0.0)))?;
        }
        return Ok(theta);
    }
    Ok(p.flat_seed(s.flat_photons.unwrap_or(DEFAULT_FLAT_PHOTONS))?)
}

/// Seed parameters for a reset problem.
pub fn reset_seed(cfg: &RunConfig, p: &ResetProblem) -> Result<Vec<f64>, Failure> {
    let s = &cfg.seed;
    if let Some(files) = &s.pulse_files {
        return from_pulses(&p.problem.generator, &read_pulses(files)?);
    }
    if s.flat_photons.is_some() {
        return Err(Failure::from(bad("seed.flat_photons", "applies to readout only")));
    }
    let a = s.flat_mhz.clone().unwrap_or_else(|| vec![350.0, 100.0]);
    if a.len() != 2 {
        return Err(Failure::from(bad("seed.flat_MHz", "reset needs [f0g1, ef] amplitudes")));
    }
    Ok(p.flat_seed([mhz(a[0]), mhz(a[1])])?)
}

fn from_pulses(
    gen: &openqoc_core::lindblad::LindbladGenerator,
    pulses: &[PixelPulse],
) -> Result<Vec<f64>, Failure> {
    if pulses.len() != gen.drives().len() {
        return Err(Failure::from(bad(
            "seed.pulse_files",
            format!("{} files for {} drives", pulses.len(), gen.drives().len()),
        )));
    }
    let mut theta = vec![0.0; gen.n_params()];
    for (k, p) in pulses.iter().enumerate() {
        gen.layout().set_pulse(&mut theta, k, p)?;
    }
    Ok(theta)
}

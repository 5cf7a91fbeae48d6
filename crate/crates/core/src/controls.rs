// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Pixelized pulse envelopes smoothed by a gaussian filter, drive terms and
//! their analytic parameter derivatives.
//!
//! A drive contributes `c(t)·A + c̄(t)·A†` to the Hamiltonian with
//! `c(t) = ½ Ω(t) e^{−i(ω_c + δ)t}`, `Ω(t) = Σ_j Ω_j ζ_j(t)` and `A` a
//! raising-type operator. `ω_c` is the nominal carrier and `δ` the (possibly
//! optimized) detuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, cis, CMat, CsrMatrix, C64, I, ZERO};
use crate::units;

pub const DEFAULT_BIN_NS: f64 = 1.0;
/// `ω_0/2π = 425.5 MHz`
pub const DEFAULT_OMEGA0_GHZ: f64 = 0.4255;
/// `ω_B/2π = 250 MHz`
pub const DEFAULT_BANDWIDTH_GHZ: f64 = 0.25;

/// `|x|` beyond which `erf(x) = ±1` in double precision.
const ERF_SATURATION: f64 = 6.0;

/// `ζ_j(t) = ½[erf(ω_0(t − jτ_0)/2) − erf(ω_0(t − (j+1)τ_0)/2)]`
pub fn zeta_basis(j: usize, t: f64, bin: f64, omega0: f64) -> f64 {
    let a = libm::erf(0.5 * omega0 * (t - j as f64 * bin));
    let b = libm::erf(0.5 * omega0 * (t - (j + 1) as f64 * bin));
    0.5 * (a - b)
}

/// Values of `ζ_j(t)` for every pixel that can be nonzero at `t`.
///
/// Returns the first pixel index; `out[k]` holds `ζ_{first+k}(t)`.
pub fn zeta_window(t: f64, n_pixels: usize, bin: f64, omega0: f64, out: &mut Vec<f64>) -> usize {
    out.clear();
    if n_pixels == 0 {
        return 0;
    }
    let reach = 2.0 * ERF_SATURATION / omega0;
    let lo = ((t - reach) / bin).floor() - 1.0;
    let hi = ((t + reach) / bin).ceil() + 1.0;
    let first = lo.max(0.0) as usize;
    let last = (hi.max(-1.0) as i64).min(n_pixels as i64 - 1);
    if (first as i64) > last {
        return first.min(n_pixels);
    }
    let mut prev = libm::erf(0.5 * omega0 * (t - first as f64 * bin));
    for j in first..=last as usize {
        let next = libm::erf(0.5 * omega0 * (t - (j + 1) as f64 * bin));
        out.push(0.5 * (prev - next));
        prev = next;
    }
    first
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelPulse {
    /// `Ω_j` in rad/ns.
    pub amplitudes: Vec<C64>,
    /// `τ_0` in ns.
    pub bin: f64,
    /// `ω_B` in rad/ns. Informational; the filter shape uses `filter_omega0`.
    pub filter_bandwidth: f64,
    /// `ω_0` in rad/ns.
    pub filter_omega0: f64,
    /// `δ` in rad/ns.
    pub carrier_detuning: f64,
}

impl PixelPulse {
    pub fn new(amplitudes: Vec<C64>) -> Self {
        PixelPulse {
            amplitudes,
            bin: DEFAULT_BIN_NS,
            filter_bandwidth: units::ghz(DEFAULT_BANDWIDTH_GHZ),
            filter_omega0: units::ghz(DEFAULT_OMEGA0_GHZ),
            carrier_detuning: 0.0,
        }
    }

    /// Flat-top seed: every pixel equal to `amplitude`.
    pub fn flat(n_pixels: usize, amplitude: C64) -> Self {
        Self::new(vec![amplitude; n_pixels])
    }

    pub fn duration(&self) -> f64 {
        self.amplitudes.len() as f64 * self.bin
    }

    pub fn evaluate_envelope(&self, t: f64) -> C64 {
        let mut z = Vec::new();
        let first = zeta_window(t, self.amplitudes.len(), self.bin, self.filter_omega0, &mut z);
        z.iter().zip(&self.amplitudes[first..]).map(|(&w, &a)| a * w).sum()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn to_file(&self) -> PulseFile {
        PulseFile {
            bin_ns: self.bin,
            omega0_ghz: units::to_ghz(self.filter_omega0),
            detuning_mhz: units::to_mhz(self.carrier_detuning),
            pixels: self
                .amplitudes
                .iter()
                .map(|a| [units::to_mhz(a.re), units::to_mhz(a.im)])
                .collect(),
        }
    }

    pub fn from_file(f: &PulseFile) -> Result<Self> {
        f.validate()?;
        Ok(PixelPulse {
            amplitudes: f.pixels.iter().map(|p| c(units::mhz(p[0]), units::mhz(p[1]))).collect(),
            bin: f.bin_ns,
            filter_bandwidth: units::ghz(DEFAULT_BANDWIDTH_GHZ),
            filter_omega0: units::ghz(f.omega0_ghz),
            carrier_detuning: units::mhz(f.detuning_mhz),
        })
    }
}

/// On-disk pulse. Pixels are `[re, im]` of `Ω_j/2π` in MHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseFile {
    pub bin_ns: f64,
    #[serde(rename = "omega0_GHz")]
    pub omega0_ghz: f64,
    #[serde(rename = "detuning_MHz")]
    pub detuning_mhz: f64,
    pub pixels: Vec<[f64; 2]>,
}

impl PulseFile {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_ns > 0.0 && self.bin_ns.is_finite()) {
            return Err(Error::invalid("pulse bin_ns must be positive"));
        }
        if !(self.omega0_ghz > 0.0 && self.omega0_ghz.is_finite()) {
            return Err(Error::invalid("pulse omega0_GHz must be positive"));
        }
        if !self.detuning_mhz.is_finite() || self.pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pulse contains non-finite values"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: PulseFile = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }
}

/// Whether a drive's carrier detuning is a free parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Detuning {
    Fixed(f64),
    Optimized,
}

#[derive(Clone, Debug)]
pub struct DriveTerm {
    pub name: String,
    /// Raising-type operator `A` on the full space.
    pub operator: CsrMatrix,
    /// Nominal carrier `ω_c` in rad/ns.
    pub frame_freq: f64,
    pub n_pixels: usize,
    pub bin: f64,
    pub omega0: f64,
    pub detuning: Detuning,
}

impl DriveTerm {
    pub fn new(name: impl Into<String>, operator: CsrMatrix, frame_freq: f64, n_pixels: usize) -> Self {
        DriveTerm {
            name: name.into(),
            operator,
            frame_freq,
            n_pixels,
            bin: DEFAULT_BIN_NS,
            omega0: units::ghz(DEFAULT_OMEGA0_GHZ),
            detuning: Detuning::Optimized,
        }
    }

    pub fn with_detuning(mut self, d: Detuning) -> Self {
        self.detuning = d;
        self
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_pixels + usize::from(self.detuning == Detuning::Optimized)
    }
}

/// Where each drive's parameters live in the flat vector `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveSlots {
    /// `θ[pixels + 2j]` = Re Ω_j, `θ[pixels + 2j + 1]` = Im Ω_j.
    pub pixels: usize,
    pub n_pixels: usize,
    pub detuning: Option<usize>,
    pub fixed_detuning: f64,
}

impl DriveSlots {
    pub fn amplitude(&self, theta: &[f64], j: usize) -> C64 {
        c(theta[self.pixels + 2 * j], theta[self.pixels + 2 * j + 1])
    }

    pub fn detuning(&self, theta: &[f64]) -> f64 {
        self.detuning.map_or(self.fixed_detuning, |k| theta[k])
    }

    pub fn envelope(&self, drive: &DriveTerm, theta: &[f64], t: f64, zeta: &mut Vec<f64>) -> C64 {
        let first = zeta_window(t, self.n_pixels, drive.bin, drive.omega0, zeta);
        zeta.iter().enumerate().map(|(k, &w)| self.amplitude(theta, first + k) * w).sum()
    }

    /// `c(t) = ½ Ω(t) e^{−i(ω_c + δ)t}`
    pub fn coefficient(&self, drive: &DriveTerm, theta: &[f64], t: f64, zeta: &mut Vec<f64>) -> C64 {
        let omega = self.envelope(drive, theta, t, zeta);
        0.5 * omega * cis(-(drive.frame_freq + self.detuning(theta)) * t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub drives: Vec<DriveSlots>,
    pub names: Vec<String>,
}

impl ParamLayout {
    pub fn new(drives: &[DriveTerm]) -> Self {
        let mut slots = Vec::new();
        let mut names = Vec::new();
        for d in drives {
            let pixels = names.len();
            for j in 0..d.n_pixels {
                names.push(format!("{}.re[{j}]", d.name));
                names.push(format!("{}.im[{j}]", d.name));
            }
            let (detuning, fixed) = match d.detuning {
                Detuning::Optimized => {
                    names.push(format!("{}.detuning", d.name));
                    (Some(names.len() - 1), 0.0)
                }
                Detuning::Fixed(v) => (None, v),
            };
            slots.push(DriveSlots { pixels, n_pixels: d.n_pixels, detuning, fixed_detuning: fixed });
        }
        ParamLayout { drives: slots, names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Reads drive `k`'s parameters as a pulse.
    pub fn pulse(&self, drives: &[DriveTerm], theta: &[f64], k: usize) -> PixelPulse {
        let s = &self.drives[k];
        let d = &drives[k];
        PixelPulse {
            amplitudes: (0..s.n_pixels).map(|j| s.amplitude(theta, j)).collect(),
            bin: d.bin,
            filter_bandwidth: units::ghz(DEFAULT_BANDWIDTH_GHZ),
            filter_omega0: d.omega0,
            carrier_detuning: s.detuning(theta),
        }
    }

    /// Writes a pulse into drive `k`'s slots.
    pub fn set_pulse(&self, theta: &mut [f64], k: usize, pulse: &PixelPulse) -> Result<()> {
        let s = &self.drives[k];
        if pulse.amplitudes.len() != s.n_pixels {
            return Err(Error::DimensionMismatch {
                context: "pulse pixels",
                expected: s.n_pixels,
                got: pulse.amplitudes.len(),
            });
        }
        for (j, a) in pulse.amplitudes.iter().enumerate() {
            theta[s.pixels + 2 * j] = a.re;
            theta[s.pixels + 2 * j + 1] = a.im;
        }
        if let Some(k) = s.detuning {
            theta[k] = pulse.carrier_detuning;
        }
        Ok(())
    }
}

/// Adds `w·Re Tr[φ†·(∂𝓛/∂θ_p)ρ]` for every parameter `p` of one drive to
/// `grad`.
///
/// `a` and `a_dag` are `A` and `A†` in the frame used by the generator at
/// time `t`, and `lab_phase` is the factor `e^{−i(ω_c+δ)t}`.
#[allow(clippy::too_many_arguments)]
pub fn liouvillian_param_derivative(
    drive: &DriveTerm,
    slots: &DriveSlots,
    t: f64,
    theta: &[f64],
    a: &CsrMatrix,
    a_dag: &CsrMatrix,
    phi: &CMat,
    rho: &CMat,
    weight: f64,
    zeta: &mut Vec<f64>,
    grad: &mut [f64],
) {
    let first = zeta_window(t, slots.n_pixels, drive.bin, drive.omega0, zeta);
    if zeta.is_empty() && slots.detuning.is_none() {
        return;
    }
    // s_X = Tr[φ†·(−i)[X, ρ]]
    let s_a = -I * (a.trace_sandwich_left(phi, rho) - a.trace_sandwich_right(phi, rho));
    let s_b = -I * (a_dag.trace_sandwich_left(phi, rho) - a_dag.trace_sandwich_right(phi, rho));
    let phase = cis(-(drive.frame_freq + slots.detuning(theta)) * t);
    // Re(dc·s_a + conj(dc)·s_b) for dc = ½ζ·phase (real part) and i·½ζ·phase.
    let base_re = 0.5 * phase * s_a + (0.5 * phase).conj() * s_b;
    let base_im = I * 0.5 * phase * s_a + (I * 0.5 * phase).conj() * s_b;
    let mut omega = ZERO;
    for (k, &z) in zeta.iter().enumerate() {
        let j = first + k;
        grad[slots.pixels + 2 * j] += weight * z * base_re.re;
        grad[slots.pixels + 2 * j + 1] += weight * z * base_im.re;
        omega += slots.amplitude(theta, j) * z;
    }
    if let Some(kd) = slots.detuning {
        let dc = -I * t * 0.5 * omega * phase;
        grad[kd] += weight * (dc * s_a + dc.conj() * s_b).re;
    }
}

// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

//! Internal units: time in ns, frequencies and rates as angular frequencies
//! in rad/ns. Ordinary-frequency values are converted here and nowhere else.

use std::f64::consts::TAU;

/// GHz → rad/ns
pub fn ghz(f: f64) -> f64 {
    TAU * f
}

/// MHz → rad/ns
pub fn mhz(f: f64) -> f64 {
    TAU * f * 1e-3
}

/// kHz → rad/ns
pub fn khz(f: f64) -> f64 {
    TAU * f * 1e-6
}

/// rad/ns → GHz
pub fn to_ghz(w: f64) -> f64 {
    w / TAU
}

/// rad/ns → MHz
pub fn to_mhz(w: f64) -> f64 {
    w / TAU * 1e3
}

/// rad/ns → kHz
pub fn to_khz(w: f64) -> f64 {
    w / TAU * 1e6
}

// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

use crate::config::ConfigError;

/// A failed run, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2: unreadable or invalid configuration, or an I/O error.
    Config(String),
    /// Exit 3: the numerics failed, or a gradient check did not pass.
    Numerical(String),
    /// Exit 4: a size or memory cap refused the run.
    Cap(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Cap(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Cap(m) => m,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            Failure::Config(_) => "config error",
            Failure::Numerical(_) => "numerical failure",
            Failure::Cap(_) => "refused",
        };
        write!(f, "{kind}: {}", self.message())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<openqoc_core::Error> for Failure {
    fn from(e: openqoc_core::Error) -> Self {
        match e {
            openqoc_core::Error::MemoryCap { .. } => Failure::Cap(e.to_string()),
            ref e if e.is_numerical() => Failure::Numerical(e.to_string()),
            e => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("i/o: {e}"))
    }
}

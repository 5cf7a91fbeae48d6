// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("eigensolver did not converge: {0}")]
    EigenNoConvergence(String),

    #[error("degenerate normal modes: {0}")]
    Degenerate(String),

    #[error("step size underflow at t = {t} ns (dt = {dt:e} ns); the problem is too stiff for the requested tolerance")]
    StepUnderflow { t: f64, dt: f64 },

    #[error("reverse-time integration diverged near t = {t} ns (norm growth {growth:.3e} since last checkpoint); use a smaller checkpoint spacing")]
    ReverseDivergence { t: f64, growth: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("missing record: {0}")]
    MissingRecord(String),

    #[error("sweep minimum lies on the boundary of the scanned range ({0}); widen the range")]
    SweepBoundary(String),

    #[error("memory estimate {estimate_bytes} bytes exceeds cap {cap_bytes} bytes")]
    MemoryCap { estimate_bytes: u64, cap_bytes: u64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::EigenNoConvergence(_)
            | Error::StepUnderflow { .. }
            | Error::ReverseDivergence { .. }
            | Error::NonFinite(_)
            | Error::DegenerateFit(_)
            | Error::SweepBoundary(_) => true,
            Error::Epoch { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

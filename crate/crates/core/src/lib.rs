// Copyright 2026 The openqoc Authors
// SPDX-License-Identifier: Apache-2.0

pub mod adjoint;
pub mod controls;
pub mod costs;
pub mod error;
pub mod hilbert;
pub mod lindblad;
pub mod models;
pub mod optimizer;
pub mod linalg;
pub mod units;

pub use error::{Error, Result};

pub use adjoint::{ControlProblem, Evaluation, GradientReport};
pub use controls::{DriveTerm, PixelPulse, PulseFile};
pub use costs::{CostKind, CostSpec, CostTerm};
pub use lindblad::{LindbladGenerator, Observable, SolverConfig, Trajectory};
pub use models::{ProblemConfig, ReadoutConfig, ResetConfig, SystemSpec};
pub use optimizer::{AdamConfig, OptimizeConfig};

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Finite-difference solvers for a mean field game model of circadian
//! oscillator synchronization and jet-lag recovery on a periodic phase grid.

// checks written as `!(x > 0.0)` also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ergodic;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod mfg;
pub mod operators;
pub mod oracle;
pub mod persist;
pub mod recovery;
pub mod sweep;

pub use config::RunConfig;
pub use ergodic::{ErgodicSolution, Method, OutcomeClass, SolverOptions};
pub use error::{Error, Result};
pub use grid::{
    normalize_density, rotate_field, ControlField, Density, ModelParams, PeriodicGrid, ValueField,
};
pub use metrics::{circular_w2, order_parameter, RecoveryReport, Thresholds};
pub use mfg::{solve_recovery_mfg, MfgOptions, MfgPath};
pub use operators::{Scheme, TransportOperator};
pub use recovery::{run_recovery, DensityPath, RecoveryOptions};
pub use sweep::{RecoveryMode, SweepParam, SweepSpec};

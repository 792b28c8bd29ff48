//! Gate synthesis by gradient-based optimal control.

mod bfgs;
mod optimize;
mod target;

pub use bfgs::{clamp_pairs, minimize, BfgsOptions, BfgsResult, StopReason};
pub use optimize::{
    optimize, optimize_from, Objective, OptimizationResult, OptimizationRun, Phase, TracePoint,
};
pub use target::{gate_error, partial_gate_error, qutrit_not, register_not_target, GateTarget, TargetKind};

//! Propagation of piecewise-constant controls, noise, and protocols.

mod engine;
mod noise;
mod protocols;
mod sequence;

pub use engine::{conjugate, propagate, propagate_lab, Integrator, Propagator, SubstepPolicy};
pub use noise::{apply_dephasing, initial_state, Layout, NoiseModel};
pub use protocols::{
    entangling_gates, entangling_protocol, fit_decay, fit_decay_to, fit_sinusoid, local_pair, partial_swap,
    phi_dq, repeated_gate_benchmark, storage_csv, storage_sweep, swap_protocol, BenchmarkRow,
    BenchmarkTable, DecayFit, EntanglingResult, FreeEvolution, Op, SineFit, Simulator,
    StorageResult, StorageRow,
};
pub(crate) use protocols::golden_section;
pub use sequence::{PulseSequence, Slice};

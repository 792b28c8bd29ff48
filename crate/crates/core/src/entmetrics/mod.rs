//! Fidelities, relative entropy, entanglement bounds and nuclear-state
//! estimation.

mod bound;
mod measures;
mod nuclear;

pub use bound::{entanglement_upper_bound, random_separable, BoundOptions, EntanglementBound, SeparableCandidate};
pub use measures::{check_state, relative_entropy, state_fidelity, KERNEL_TOL, STATE_TOL};
pub use nuclear::{
    assemble_register, bloch_state, bloch_vector, estimate_nuclear_state, estimation_residual, nuclear_bell_state, EstimateOptions,
    NuclearEstimate, TomographyTriple,
};

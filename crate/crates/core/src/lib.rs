//! Optimal control and entanglement analysis for registers of coupled NV centers.

pub mod calib;
pub mod dynamics;
pub mod entmetrics;
pub mod error;
pub mod formats;
pub mod grape;
pub mod linalg;
pub mod rotframe;
pub mod setup;
pub mod spinsys;

pub use error::{Error, Result};

/// Guide chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/spin-system.md")]
    struct SpinSystem;
    #[doc = include_str!("../../../book/src/rotating-frame.md")]
    struct RotatingFrame;
    #[doc = include_str!("../../../book/src/propagation.md")]
    struct Propagation;
    #[doc = include_str!("../../../book/src/synthesis.md")]
    struct Synthesis;
    #[doc = include_str!("../../../book/src/entanglement.md")]
    struct Entanglement;
    #[doc = include_str!("../../../book/src/calibration.md")]
    struct Calibration;
}

use thiserror::Error;

/// Errors reported by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported spin magnitude {0}")]
    UnsupportedSpin(f64),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not hermitian (deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (minimum eigenvalue {0:.3e})")]
    NotPositive(f64),
    #[error("control polarization has no component perpendicular to the NV axis")]
    ZeroTransverseField,
    #[error(
        "fast mode at {frequency_hz:.6e} Hz on channel {channel} would be retained; lower the retention amplitude"
    )]
    FastModeRetained { channel: usize, frequency_hz: f64 },
    #[error("sequence has {got} control columns but the frame has {expected} channels")]
    ChannelCountMismatch { expected: usize, got: usize },
    #[error("calibration amplitudes decrease between points {0} and {1}")]
    NonMonotoneCalibration(usize, usize),
    #[error("value {value} outside calibrated range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("decomposition failed: {0}")]
    Decomposition(&'static str),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

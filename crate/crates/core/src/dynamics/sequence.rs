use crate::error::{invalid, Error, Result};
use crate::linalg::C64;
use std::f64::consts::TAU;

/// One piecewise-constant slice: duration and, per channel, the complex
/// amplitude `Ω/2π · e^{iφ}` in Hz (real part in-phase, imaginary part quadrature).
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub duration: f64,
    pub amplitudes_hz: Vec<C64>,
}

impl Slice {
    pub fn from_rabi_phase(duration: f64, rabi_phase: &[(f64, f64)]) -> Self {
        Self {
            duration,
            amplitudes_hz: rabi_phase
                .iter()
                .map(|&(omega, phi)| C64::from_polar(omega / TAU, phi))
                .collect(),
        }
    }

    /// `(Ω in rad/s, φ)` of channel `k`.
    pub fn rabi_phase(&self, k: usize) -> (f64, f64) {
        let z = self.amplitudes_hz[k];
        (TAU * z.norm(), z.arg())
    }

    /// Amplitudes in rad/s.
    pub fn controls(&self) -> Vec<C64> {
        self.amplitudes_hz.iter().map(|z| z * TAU).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PulseSequence {
    pub slices: Vec<Slice>,
}

impl PulseSequence {
    pub fn new(slices: Vec<Slice>) -> Self {
        Self { slices }
    }

    /// `n` slices of equal duration with zero amplitude on `channels` channels.
    pub fn zeros(n: usize, duration: f64, channels: usize) -> Self {
        Self {
            slices: vec![
                Slice {
                    duration,
                    amplitudes_hz: vec![C64::new(0.0, 0.0); channels],
                };
                n
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn n_channels(&self) -> Option<usize> {
        self.slices.first().map(|s| s.amplitudes_hz.len())
    }

    pub fn total_duration(&self) -> f64 {
        self.slices.iter().map(|s| s.duration).sum()
    }

    /// Checks durations, finiteness, channel counts and amplitude limits.
    pub fn validate(&self, max_rabi_hz: &[f64]) -> Result<()> {
        for (i, s) in self.slices.iter().enumerate() {
            if !(s.duration > 0.0) || !s.duration.is_finite() {
                return Err(invalid("duration", format!("slice {i} has non-positive duration")));
            }
            if s.amplitudes_hz.len() != max_rabi_hz.len() {
                return Err(Error::ChannelCountMismatch {
                    expected: max_rabi_hz.len(),
                    got: s.amplitudes_hz.len(),
                });
            }
            for (k, (z, &m)) in s.amplitudes_hz.iter().zip(max_rabi_hz).enumerate() {
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(invalid("amplitude", format!("slice {i} channel {k} is not finite")));
                }
                if z.norm() > m * (1.0 + 1e-9) {
                    return Err(invalid(
                        "amplitude",
                        format!("slice {i} channel {k}: {:.6e} Hz exceeds {m:.6e} Hz", z.norm()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Scales any amplitude above its channel limit back onto the limit.
    pub fn clamp(&mut self, max_rabi_hz: &[f64]) {
        for s in &mut self.slices {
            for (z, &m) in s.amplitudes_hz.iter_mut().zip(max_rabi_hz) {
                let r = z.norm();
                if r > m {
                    *z *= m / r;
                }
            }
        }
    }

    /// Concatenation of `self` followed by `other`.
    pub fn then(&self, other: &PulseSequence) -> PulseSequence {
        let mut slices = self.slices.clone();
        slices.extend(other.slices.iter().cloned());
        PulseSequence { slices }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rabi_phase_round_trip() {
        let s = Slice::from_rabi_phase(1e-7, &[(TAU * 3e6, 0.4), (TAU * 1e6, -2.0)]);
        let (w, p) = s.rabi_phase(0);
        assert!((w - TAU * 3e6).abs() < 1e-6 && (p - 0.4).abs() < 1e-12);
        assert!((s.rabi_phase(1).1 + 2.0).abs() < 1e-12);
    }

    #[test]
    fn validation_and_clamp() {
        let mut seq = PulseSequence::zeros(3, 1e-7, 2);
        seq.slices[1].amplitudes_hz[0] = C64::new(3e6, 4e6);
        assert!(seq.validate(&[4e6, 4e6]).is_err());
        seq.clamp(&[4e6, 4e6]);
        assert!(seq.validate(&[4e6, 4e6]).is_ok());
        assert!((seq.slices[1].amplitudes_hz[0].norm() - 4e6).abs() < 1e-6);
        assert!(matches!(
            seq.validate(&[1.0]),
            Err(Error::ChannelCountMismatch { expected: 1, got: 2 })
        ));
        assert!((seq.total_duration() - 3e-7).abs() < 1e-20);
    }
}

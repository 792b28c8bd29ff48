//! Amplifier-setting to Rabi-frequency calibration per carrier.

use crate::dynamics::PulseSequence;
use crate::error::{invalid, Error, Result};
use crate::linalg::C64;
use std::fmt::Write as _;

/// Monotone cubic Hermite interpolant through calibration points.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationCurve {
    pub carrier_hz: f64,
    /// Amplifier settings, strictly increasing.
    pub settings: Vec<f64>,
    /// Rabi frequencies (Hz), non-decreasing.
    pub rabi_hz: Vec<f64>,
    slopes: Vec<f64>,
}

/// Fritsch–Carlson slopes: secant-based, zeroed at local extrema and scaled
/// so that no segment overshoots its end values.
fn monotone_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let secant: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    if n == 2 {
        return vec![secant[0]; 2];
    }
    let mut m = vec![0.0; n];
    m[0] = secant[0];
    m[n - 1] = secant[n - 2];
    for i in 1..n - 1 {
        m[i] = if secant[i - 1] * secant[i] <= 0.0 {
            0.0
        } else {
            (secant[i - 1] + secant[i]) / 2.0
        };
    }
    for i in 0..n - 1 {
        if secant[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / secant[i];
        let b = m[i + 1] / secant[i];
        let r = a.hypot(b);
        if r > 3.0 {
            m[i] = 3.0 * a / r * secant[i];
            m[i + 1] = 3.0 * b / r * secant[i];
        }
    }
    m
}

impl CalibrationCurve {
    /// Fits the interpolant; needs at least two points.
    pub fn fit(carrier_hz: f64, points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("calibration", "needs at least two points"));
        }
        if points.iter().any(|(a, w)| !a.is_finite() || !w.is_finite()) {
            return Err(invalid("calibration", "points must be finite"));
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(invalid("calibration", "settings must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::NonMonotoneCalibration(i, i + 1));
            }
        }
        let settings: Vec<f64> = points.iter().map(|p| p.0).collect();
        let rabi_hz: Vec<f64> = points.iter().map(|p| p.1).collect();
        let slopes = monotone_slopes(&settings, &rabi_hz);
        Ok(Self {
            carrier_hz,
            settings,
            rabi_hz,
            slopes,
        })
    }

    pub fn setting_range(&self) -> (f64, f64) {
        (self.settings[0], *self.settings.last().unwrap())
    }

    pub fn rabi_range(&self) -> (f64, f64) {
        (self.rabi_hz[0], *self.rabi_hz.last().unwrap())
    }

    /// Largest calibrated Rabi frequency (Hz).
    pub fn max_rabi_hz(&self) -> f64 {
        self.rabi_range().1
    }

    fn segment(&self, a: f64) -> usize {
        let k = self.settings.partition_point(|&x| x <= a);
        k.saturating_sub(1).min(self.settings.len() - 2)
    }

    fn eval(&self, k: usize, a: f64) -> (f64, f64) {
        let (x0, x1) = (self.settings[k], self.settings[k + 1]);
        let h = x1 - x0;
        let t = (a - x0) / h;
        let (y0, y1) = (self.rabi_hz[k], self.rabi_hz[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let deriv = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        (value, deriv)
    }

    /// Rabi frequency (Hz) for an amplifier setting inside the calibrated range.
    pub fn rabi_for_setting(&self, a: f64) -> Result<f64> {
        let (lo, hi) = self.setting_range();
        if !(lo..=hi).contains(&a) {
            return Err(Error::OutOfRange { value: a, lo, hi });
        }
        Ok(self.eval(self.segment(a), a).0)
    }

    /// Derivative of the interpolant at `a`.
    pub fn slope_at(&self, a: f64) -> Result<f64> {
        let (lo, hi) = self.setting_range();
        if !(lo..=hi).contains(&a) {
            return Err(Error::OutOfRange { value: a, lo, hi });
        }
        Ok(self.eval(self.segment(a), a).1)
    }

    /// Smallest setting reaching `rabi_hz`, by bisection on the monotone
    /// interpolant.
    pub fn setting_for_rabi(&self, rabi_hz: f64) -> Result<f64> {
        let (lo, hi) = self.rabi_range();
        if !(lo..=hi).contains(&rabi_hz) {
            return Err(Error::OutOfRange { value: rabi_hz, lo, hi });
        }
        let k = self.rabi_hz.partition_point(|&w| w < rabi_hz);
        if k < self.rabi_hz.len() && self.rabi_hz[k] == rabi_hz {
            return Ok(self.settings[k]);
        }
        let seg = k - 1;
        let (mut a, mut b) = (self.settings[seg], self.settings[seg + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.eval(seg, mid).0 < rabi_hz {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Parses the text format: a header with the carrier frequency (Hz),
    /// then one `setting rabi_hz` pair per line. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut carrier = None;
        let mut points = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line: n + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|_| err(&format!("not a number: {f}"))))
                .collect::<Result<_>>()?;
            match (carrier, fields.as_slice()) {
                (None, [f]) => carrier = Some(*f),
                (None, _) => return Err(err("expected the carrier frequency")),
                (Some(_), [a, w]) => points.push((*a, *w)),
                (Some(_), _) => return Err(err("expected `setting rabi_hz`")),
            }
        }
        let carrier = carrier.ok_or(Error::Parse {
            line: 0,
            msg: "empty calibration file".into(),
        })?;
        Self::fit(carrier, &points)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:e}\n", self.carrier_hz);
        for (a, w) in self.settings.iter().zip(&self.rabi_hz) {
            let _ = writeln!(out, "{a:e} {w:e}");
        }
        out
    }
}

/// Complex amplifier settings for each slice and channel: the magnitude is
/// inverted through the channel's curve and the phase is kept.
pub fn amplifier_settings(seq: &PulseSequence, curves: &[CalibrationCurve]) -> Result<Vec<Vec<C64>>> {
    seq.slices
        .iter()
        .map(|s| {
            if s.amplitudes_hz.len() != curves.len() {
                return Err(Error::ChannelCountMismatch {
                    expected: curves.len(),
                    got: s.amplitudes_hz.len(),
                });
            }
            s.amplitudes_hz
                .iter()
                .zip(curves)
                .map(|(z, c)| {
                    let r = z.norm();
                    if r == 0.0 {
                        return Ok(C64::from(0.0));
                    }
                    Ok(C64::from_polar(c.setting_for_rabi(r)?, z.arg()))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn saturation(a: f64) -> f64 {
        20e6 * (1.0 - (-a / 0.4).exp())
    }

    #[test]
    fn two_points_give_a_line() {
        let c = CalibrationCurve::fit(2.9e9, &[(0.0, 0.0), (1.0, 10e6)]).unwrap();
        for a in [0.0, 0.25, 0.5, 1.0] {
            assert!((c.rabi_for_setting(a).unwrap() - 10e6 * a).abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_points_stay_linear() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 0.2, 1e6 + 4e6 * i as f64 * 0.2)).collect();
        let c = CalibrationCurve::fit(1.0, &pts).unwrap();
        for k in 0..=100 {
            let a = k as f64 / 100.0;
            assert!((c.rabi_for_setting(a).unwrap() - (1e6 + 4e6 * a)).abs() < 1e-6);
        }
    }

    #[test]
    fn smooth_saturation_is_tracked() {
        let pts: Vec<(f64, f64)> = (0..=20).map(|i| i as f64 * 0.05).map(|a| (a, saturation(a))).collect();
        let c = CalibrationCurve::fit(1.0, &pts).unwrap();
        let range = saturation(1.0);
        for w in pts.windows(2) {
            let mid = 0.5 * (w[0].0 + w[1].0);
            let err = (c.rabi_for_setting(mid).unwrap() - saturation(mid)).abs();
            assert!(err < 0.01 * range, "{err}");
        }
    }

    #[test]
    fn knots_are_exact_both_ways() {
        let pts = [(0.0, 0.0), (0.3, 4e6), (0.5, 4e6), (0.9, 11e6), (1.0, 11.5e6)];
        let c = CalibrationCurve::fit(1.0, &pts).unwrap();
        for (a, w) in pts {
            assert_eq!(c.rabi_for_setting(a).unwrap(), w);
        }
        assert_eq!(c.setting_for_rabi(11e6).unwrap(), 0.9);
        // A flat stretch inverts to its left end.
        assert_eq!(c.setting_for_rabi(4e6).unwrap(), 0.3);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(matches!(
            CalibrationCurve::fit(1.0, &[(0.0, 0.0), (0.5, 2.0), (1.0, 1.0)]),
            Err(Error::NonMonotoneCalibration(1, 2))
        ));
        assert!(CalibrationCurve::fit(1.0, &[(0.0, 0.0)]).is_err());
        assert!(CalibrationCurve::fit(1.0, &[(0.5, 0.0), (0.5, 1.0)]).is_err());
        let c = CalibrationCurve::fit(1.0, &[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!(matches!(c.rabi_for_setting(1.5), Err(Error::OutOfRange { .. })));
        assert!(c.setting_for_rabi(-0.1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = CalibrationCurve::fit(2.8735e9, &[(0.0, 0.0), (0.5, 6.1e6), (1.0, 10.25e6)]).unwrap();
        let back = CalibrationCurve::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let err = CalibrationCurve::parse("2.8e9\n0 0\n1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn settings_keep_the_phase() {
        let c = CalibrationCurve::fit(1.0, &[(0.0, 0.0), (1.0, 10e6)]).unwrap();
        let seq = PulseSequence::new(vec![crate::dynamics::Slice {
            duration: 1e-7,
            amplitudes_hz: vec![C64::from_polar(5e6, 0.3)],
        }]);
        let s = amplifier_settings(&seq, &[c]).unwrap();
        assert!((s[0][0] - C64::from_polar(0.5, 0.3)).norm() < 1e-12);
    }
}

//! Rotating frame defined by the electron part of the Hamiltonian.
//!
//! In the frame of `H0`, an operator `A` splits into components
//! `P_a A P_b e^{i(ω_a - ω_b)t}` over the eigenspaces of `H0`. A control
//! channel with carrier `ω̃` contributes terms
//!
//! ```text
//! ½ (z(t) X_ω e^{iωt} + h.c.),   ω = ω̃ + ω_a - ω_b,   z = Ω e^{iφ}
//! ```
//!
//! Components with `ω_a ≥ ω_b` rotate at least as fast as the carrier and
//! are always dropped. The others are kept when
//! `s · Ω_ret · ‖X_ω‖_F > |ω|` for the cutoff `s`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, eigh, zeros, CMat, C64};
use crate::spinsys::{ControlChannel, SystemHamiltonian};
use faer::Mat;
use std::f64::consts::TAU;

/// Eigenspaces of a Hermitian `H0`, clustered by energy.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Mean energy of each cluster (rad/s), ascending.
    pub energies: Vec<f64>,
    /// Orthonormal basis of each cluster, as columns.
    pub bases: Vec<CMat>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn projector(&self, a: usize) -> CMat {
        &self.bases[a] * self.bases[a].adjoint()
    }

    pub fn rank(&self, a: usize) -> usize {
        self.bases[a].ncols()
    }
}

/// Clusters eigenvalues of `h0` whose consecutive gaps are at most `tol` (rad/s).
pub fn spectral_decompose(h0: &CMat, tol: f64) -> Result<SpectralDecomposition> {
    if !(tol >= 0.0) {
        return Err(invalid("degeneracy tolerance", "must be non-negative"));
    }
    let dev = crate::linalg::hermitian_deviation(h0);
    let scale_ = crate::linalg::frobenius(h0).max(1.0);
    if dev > 1e-10 * scale_ {
        return Err(Error::NotHermitian(dev));
    }
    let e = eigh(h0)?;
    let n = h0.nrows();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for k in 0..n {
        match clusters.last_mut() {
            Some(cl) if e.values[k] - e.values[*cl.last().unwrap()] <= tol => cl.push(k),
            _ => clusters.push(vec![k]),
        }
    }
    let energies = clusters
        .iter()
        .map(|cl| cl.iter().map(|&k| e.values[k]).sum::<f64>() / cl.len() as f64)
        .collect();
    let bases = clusters
        .iter()
        .map(|cl| Mat::from_fn(n, cl.len(), |i, j| e.vectors[(i, cl[j])]))
        .collect();
    Ok(SpectralDecomposition { energies, bases })
}

/// One block `P_a A P_b` of an operator in the frame, rotating at `ω_a - ω_b`.
#[derive(Clone, Debug)]
pub struct FrameComponent {
    pub from: usize,
    pub to: usize,
    pub delta: f64,
    pub matrix: CMat,
}

/// All nonzero blocks `P_a A P_b` (relative threshold `1e-13`).
pub fn frame_components(a: &CMat, dec: &SpectralDecomposition) -> Vec<FrameComponent> {
    let norm = crate::linalg::frobenius(a);
    let mut out = Vec::new();
    for i in 0..dec.len() {
        let left = dec.bases[i].adjoint() * a;
        for j in 0..dec.len() {
            let block = &left * &dec.bases[j];
            if block.norm_l2() <= 1e-13 * norm {
                continue;
            }
            let full = &(&dec.bases[i] * &block) * dec.bases[j].adjoint();
            out.push(FrameComponent {
                from: i,
                to: j,
                delta: dec.energies[i] - dec.energies[j],
                matrix: full,
            });
        }
    }
    out
}

/// `s · Ω · ‖X‖ > |ω|`.
pub fn is_retained(cutoff: f64, amplitude: f64, norm: f64, frequency: f64) -> bool {
    cutoff * amplitude * norm > frequency.abs()
}

/// How the amplitude in the retention test is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RetentionAmplitude {
    /// The channel's maximum Rabi frequency; an error if a fast mode would be kept.
    ChannelMaximum,
    /// A fixed amplitude (Hz) for every channel; an error if a fast mode would be kept.
    Fixed(f64),
    /// Per channel, this fraction of the largest amplitude that keeps no fast mode.
    Auto(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameSettings {
    pub cutoff: f64,
    /// Cutoff for the rotating parts of the static residual; `None` uses `cutoff`.
    /// Drift terms have no amplitude, so the test is `s · ‖X‖ > |ω|`.
    pub drift_cutoff: Option<f64>,
    pub degeneracy_tol_hz: f64,
    pub retention: RetentionAmplitude,
}

impl Default for FrameSettings {
    fn default() -> Self {
        Self {
            cutoff: 300.0,
            drift_cutoff: None,
            degeneracy_tol_hz: 1e3,
            retention: RetentionAmplitude::Auto(0.9),
        }
    }
}

/// A rotating term. Controls contribute `½(z X e^{iωt} + h.c.)`, drift terms
/// (`channel == None`) contribute `X e^{iωt} + h.c.`.
#[derive(Clone, Debug)]
pub struct FrameTerm {
    pub frequency: f64,
    pub operator: CMat,
    pub channel: Option<usize>,
}

/// Bookkeeping for every candidate term, kept or not.
#[derive(Clone, Debug, PartialEq)]
pub struct TermRecord {
    pub channel: Option<usize>,
    pub frequency_hz: f64,
    pub norm: f64,
    pub fast: bool,
    pub retained: bool,
}

#[derive(Clone, Debug)]
pub struct RotatingFrame {
    pub dims: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
    pub h0: CMat,
    pub decomposition: SpectralDecomposition,
    pub residual_static: CMat,
    pub terms: Vec<FrameTerm>,
    /// Carrier of each channel (rad/s).
    pub carriers: Vec<f64>,
    /// Maximum Rabi frequency of each channel (rad/s).
    pub max_rabi: Vec<f64>,
    /// Amplitude used in the retention test of each channel (rad/s).
    pub retention_rabi: Vec<f64>,
    pub cutoff: f64,
    pub audit: Vec<TermRecord>,
}

/// Sums matrices whose frequencies agree within `tol`.
fn cluster_by_frequency(mut items: Vec<(f64, CMat)>, tol: f64) -> Vec<(f64, CMat)> {
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, CMat, usize, f64)> = Vec::new();
    for (w, m) in items {
        match out.last_mut() {
            Some(last) if w - last.3 <= tol => {
                last.1 += &m;
                last.0 += w;
                last.2 += 1;
                last.3 = w;
            }
            _ => out.push((w, m, 1, w)),
        }
    }
    out.into_iter()
        .map(|(sum, m, k, _)| (sum / k as f64, m))
        .collect()
}

impl RotatingFrame {
    /// Builds the frame of `system.frame_part` with the given control channels
    /// and their operators (from `spinsys::register_control` or similar).
    pub fn build(
        system: &SystemHamiltonian,
        channels: &[(ControlChannel, CMat)],
        settings: &FrameSettings,
    ) -> Result<Self> {
        if !(settings.cutoff > 0.0) {
            return Err(invalid("cutoff", "must be positive"));
        }
        let drift_cutoff = settings.drift_cutoff.unwrap_or(settings.cutoff);
        if !(drift_cutoff > 0.0) {
            return Err(invalid("drift_cutoff", "must be positive"));
        }
        let tol = TAU * settings.degeneracy_tol_hz;
        let dec = spectral_decompose(&system.frame_part, tol)?;
        let n = system.dim();
        let mut audit = Vec::new();
        let mut terms = Vec::new();

        let mut residual_static = zeros(n, n);
        let mut drift = Vec::new();
        for comp in frame_components(&system.residual, &dec) {
            if comp.delta.abs() <= tol {
                residual_static += &comp.matrix;
            } else if comp.delta < 0.0 {
                drift.push((comp.delta, comp.matrix));
            }
        }
        for (w, op) in cluster_by_frequency(drift, tol) {
            let norm = op.norm_l2();
            let keep = is_retained(drift_cutoff, 1.0, norm, w);
            audit.push(TermRecord {
                channel: None,
                frequency_hz: w / TAU,
                norm,
                fast: false,
                retained: keep,
            });
            if keep {
                terms.push(FrameTerm {
                    frequency: w,
                    operator: op,
                    channel: None,
                });
            }
        }

        let mut carriers = Vec::new();
        let mut max_rabi = Vec::new();
        let mut retention_rabi = Vec::new();
        for (k, (ch, cop)) in channels.iter().enumerate() {
            ch.validate()?;
            if cop.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "control operator {k} has dimension {}, system has {n}",
                    cop.nrows()
                )));
            }
            let carrier = TAU * ch.carrier_hz;
            let mut slow = Vec::new();
            let mut fast = Vec::new();
            for comp in frame_components(cop, &dec) {
                let w = carrier + comp.delta;
                let same_level = comp.from == comp.to;
                if comp.delta < 0.0 || (same_level && carrier == 0.0) {
                    slow.push((w, comp.matrix));
                } else {
                    fast.push((w, comp.matrix));
                }
            }
            let slow = cluster_by_frequency(slow, tol);
            let fast = cluster_by_frequency(fast, tol);
            // Largest amplitude for which no fast mode passes the test.
            let limit = fast
                .iter()
                .map(|(w, m)| w.abs() / (settings.cutoff * m.norm_l2()))
                .fold(f64::INFINITY, f64::min);
            let amp = match settings.retention {
                RetentionAmplitude::ChannelMaximum => TAU * ch.max_rabi_hz,
                RetentionAmplitude::Fixed(hz) => TAU * hz,
                RetentionAmplitude::Auto(f) => {
                    if !(f > 0.0 && f < 1.0) {
                        return Err(invalid("retention fraction", "must be in (0, 1)"));
                    }
                    f * limit
                }
            };
            for (w, m) in &fast {
                let norm = m.norm_l2();
                let keep = is_retained(settings.cutoff, amp, norm, *w);
                if keep {
                    return Err(Error::FastModeRetained {
                        channel: k,
                        frequency_hz: w / TAU,
                    });
                }
                audit.push(TermRecord {
                    channel: Some(k),
                    frequency_hz: w / TAU,
                    norm,
                    fast: true,
                    retained: false,
                });
            }
            for (w, m) in slow {
                let norm = m.norm_l2();
                let keep = w.abs() <= tol || is_retained(settings.cutoff, amp, norm, w);
                audit.push(TermRecord {
                    channel: Some(k),
                    frequency_hz: w / TAU,
                    norm,
                    fast: false,
                    retained: keep,
                });
                if keep {
                    terms.push(FrameTerm {
                        frequency: w,
                        operator: m,
                        channel: Some(k),
                    });
                }
            }
            carriers.push(carrier);
            max_rabi.push(TAU * ch.max_rabi_hz);
            retention_rabi.push(amp);
        }

        Ok(Self {
            dims: system.dims.clone(),
            groups: system.groups.clone(),
            h0: system.frame_part.clone(),
            decomposition: dec,
            residual_static,
            terms,
            carriers,
            max_rabi,
            retention_rabi,
            cutoff: settings.cutoff,
            audit,
        })
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.carriers.len()
    }

    fn static_tol(&self) -> f64 {
        // Frequencies below this are treated as exactly static.
        1e-6
    }

    /// The frame with only its time-independent terms (frequencies set to 0).
    pub fn static_part(&self) -> Self {
        let tol = TAU * 1e3;
        let terms = self
            .terms
            .iter()
            .filter(|t| t.frequency.abs() <= tol)
            .map(|t| FrameTerm {
                frequency: 0.0,
                ..t.clone()
            })
            .collect();
        Self {
            terms,
            ..self.clone()
        }
    }

    pub fn is_static(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.frequency.abs() <= self.static_tol())
    }

    /// Largest |ω| among retained terms (rad/s).
    pub fn max_frequency(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.frequency.abs())
            .fold(0.0, f64::max)
    }

    /// Frame Hamiltonian at time `t` for control amplitudes `z` (rad/s).
    pub fn hamiltonian(&self, z: &[C64], t: f64) -> CMat {
        let mut h = self.residual_static.clone();
        for term in &self.terms {
            let phase = C64::from_polar(1.0, term.frequency * t);
            let coef = match term.channel {
                Some(k) => z[k] * phase * 0.5,
                None => phase,
            };
            if coef == c(0.0) {
                continue;
            }
            add_hermitian_pair(&mut h, &term.operator, coef);
        }
        h
    }

    /// `(∂H/∂x_k, ∂H/∂y_k)` at time `t` for `z_k = x_k + i y_k`.
    pub fn control_derivatives(&self, k: usize, t: f64) -> (CMat, CMat) {
        let n = self.dim();
        let mut dx = zeros(n, n);
        let mut dy = zeros(n, n);
        for term in self.terms.iter().filter(|t| t.channel == Some(k)) {
            let phase = C64::from_polar(0.5, term.frequency * t);
            add_hermitian_pair(&mut dx, &term.operator, phase);
            add_hermitian_pair(&mut dy, &term.operator, phase * C64::new(0.0, 1.0));
        }
        (dx, dy)
    }

    /// Lab-frame unitary from a frame unitary at time `t`: `e^{-i H0 t} U'`.
    pub fn to_lab(&self, u: &CMat, t: f64) -> Result<CMat> {
        Ok(&crate::linalg::expm_hermitian(&self.h0, t)? * u)
    }

    /// Operator `P_a A P_b` restricted to the eigenbasis of a cluster pair.
    pub fn block(&self, a: &CMat, from: usize, to: usize) -> CMat {
        let d = &self.decomposition;
        &(d.bases[from].adjoint() * a) * &d.bases[to]
    }
}

/// `h += coef·X + conj(coef)·X†`.
pub(crate) fn add_hermitian_pair(h: &mut CMat, x: &CMat, coef: C64) {
    let n = h.nrows();
    for j in 0..n {
        for i in 0..n {
            h[(i, j)] += coef * x[(i, j)] + (coef * x[(j, i)]).conj();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm_hermitian, max_abs_diff, scale};
    use crate::spinsys::{
        electron_resonance_hz, register_control, register_system, NvLabel, RegisterModel,
    };

    fn register_frame(settings: &FrameSettings) -> Result<RotatingFrame> {
        let m = RegisterModel::reference_pair();
        let sys = register_system(&m)?;
        let carrier = electron_resonance_hz(&m.nv_a, m.static_field_t, 1)?;
        let ch = ControlChannel {
            carrier_hz: carrier,
            polarization: [0.0, 0.0, 1.0],
            max_rabi_hz: 10e6,
            reference: NvLabel::A,
        };
        let (cop, _) = register_control(&ch, &m)?;
        RotatingFrame::build(&sys, &[(ch, cop)], settings)
    }

    #[test]
    fn register_frame_has_nine_rank_four_clusters() {
        let m = RegisterModel::reference_pair();
        let sys = register_system(&m).unwrap();
        let dec = spectral_decompose(&sys.frame_part, TAU * 10e3).unwrap();
        assert_eq!(dec.len(), 9);
        assert!((0..9).all(|a| dec.rank(a) == 4));
        let mut sum = zeros(36, 36);
        for a in 0..9 {
            sum += dec.projector(a);
        }
        assert!(max_abs_diff(&sum, &crate::linalg::eye(36)) < 1e-12);
    }

    #[test]
    fn components_reassemble_the_frame_operator() {
        let m = RegisterModel::reference_pair();
        let sys = register_system(&m).unwrap();
        let dec = spectral_decompose(&sys.frame_part, TAU * 1e3).unwrap();
        let t = 3.7e-9;
        let mut sum = zeros(36, 36);
        for comp in frame_components(&sys.residual, &dec) {
            sum += scale(&comp.matrix, C64::from_polar(1.0, comp.delta * t));
        }
        let u = expm_hermitian(&sys.frame_part, t).unwrap();
        let direct = &(u.adjoint() * &sys.residual) * &u;
        assert!(max_abs_diff(&sum, &direct) < 1e-6 * sys.residual.norm_l2());
    }

    #[test]
    fn retention_inequality() {
        let s = 300.0;
        let omax = TAU * 10e6;
        assert!(!is_retained(s, omax, 1.0, TAU * 2.0 * 2.87e9 * 2.0));
        assert!(is_retained(s, omax, 1.0, TAU * 30e6));
    }

    #[test]
    fn resonant_term_is_static_and_fast_modes_are_dropped() {
        let f = register_frame(&FrameSettings::default()).unwrap();
        let statics: Vec<_> = f.terms.iter().filter(|t| t.frequency.abs() < 1.0).collect();
        assert_eq!(statics.len(), 1);
        assert!(f.audit.iter().filter(|r| r.fast).all(|r| !r.retained));
        // Slow crosstalk on NV B (about 30 MHz away) is kept.
        assert!(f
            .terms
            .iter()
            .any(|t| (t.frequency / TAU).abs() > 20e6 && (t.frequency / TAU).abs() < 40e6));
    }

    #[test]
    fn channel_maximum_amplitude_trips_the_fast_mode_guard() {
        let settings = FrameSettings {
            retention: RetentionAmplitude::ChannelMaximum,
            ..FrameSettings::default()
        };
        assert!(matches!(
            register_frame(&settings),
            Err(Error::FastModeRetained { .. })
        ));
    }

    #[test]
    fn drift_terms_are_never_retained() {
        let f = register_frame(&FrameSettings::default()).unwrap();
        assert!(f.audit.iter().filter(|r| r.channel.is_none()).all(|r| !r.retained));
        assert!(f.audit.iter().any(|r| r.channel.is_some() && r.retained));
        let ret = f.retention_rabi[0] / TAU;
        assert!(ret > 1e6 && ret < 2e6, "{ret}");
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let f = register_frame(&FrameSettings::default()).unwrap();
        let h = f.hamiltonian(&[C64::new(3e7, -2e7)], 1.3e-7);
        assert!(crate::linalg::hermitian_deviation(&h) < 1e-6);
    }
}

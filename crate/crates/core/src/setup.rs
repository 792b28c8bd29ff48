//! Ready-made frames for the common register configurations.

use crate::dynamics::{Layout, Simulator, SubstepPolicy};
use crate::error::Result;
use crate::linalg::CMat;
use crate::rotframe::{FrameSettings, RotatingFrame};
use crate::spinsys::{
    electron_resonance_hz, register_control, register_logical_basis, register_system,
    single_nv_control, single_nv_logical_basis, single_nv_system, ControlChannel, NvLabel,
    NvParams, RegisterModel,
};

/// A rotating frame together with its logical basis and factor layout.
#[derive(Clone, Debug)]
pub struct Setup {
    pub frame: RotatingFrame,
    /// Maps logical to bare coordinates.
    pub basis: CMat,
    pub layout: Layout,
    pub channels: Vec<ControlChannel>,
}

impl Setup {
    pub fn register(
        model: &RegisterModel,
        channels: Vec<ControlChannel>,
        settings: &FrameSettings,
    ) -> Result<Self> {
        let sys = register_system(model)?;
        let ops = channels
            .iter()
            .map(|ch| Ok((ch.clone(), register_control(ch, model)?.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frame: RotatingFrame::build(&sys, &ops, settings)?,
            basis: register_logical_basis(model)?,
            layout: Layout::register(),
            channels,
        })
    }

    pub fn single_nv(
        p: &NvParams,
        field_t: [f64; 3],
        channels: Vec<ControlChannel>,
        settings: &FrameSettings,
    ) -> Result<Self> {
        let sys = single_nv_system(p, field_t)?;
        let ops = channels
            .iter()
            .map(|ch| Ok((ch.clone(), single_nv_control(ch, p)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frame: RotatingFrame::build(&sys, &ops, settings)?,
            basis: single_nv_logical_basis(p, field_t)?,
            layout: Layout::single_nv(),
            channels,
        })
    }

    pub fn simulator(&self, policy: SubstepPolicy) -> Result<Simulator<'_>> {
        Simulator::new(&self.frame, self.basis.clone(), self.layout.clone(), policy)
    }
}

/// Two carriers on the `0 → +1` and `0 → -1` lines of one NV, with the field
/// polarized along the crystal z axis.
pub fn nv_channels(
    model: &RegisterModel,
    label: NvLabel,
    max_rabi_hz: f64,
) -> Result<Vec<ControlChannel>> {
    let p = model.nv(label);
    [1, -1]
        .iter()
        .map(|&ms| {
            Ok(ControlChannel {
                carrier_hz: electron_resonance_hz(p, model.static_field_t, ms)?,
                polarization: [0.0, 0.0, 1.0],
                max_rabi_hz,
                reference: label,
            })
        })
        .collect()
}

/// The reference register driven on NV A's two lines.
pub fn reference_register(max_rabi_hz: f64) -> Result<Setup> {
    let model = RegisterModel::reference_pair();
    let channels = nv_channels(&model, NvLabel::A, max_rabi_hz)?;
    Setup::register(&model, channels, &FrameSettings::default())
}

/// NV A of the reference register on its own, driven on both of its lines.
pub fn reference_single_nv(max_rabi_hz: f64) -> Result<Setup> {
    let model = RegisterModel::reference_pair();
    let channels = nv_channels(&model, NvLabel::A, max_rabi_hz)?;
    Setup::single_nv(&model.nv_a, model.static_field_t, channels, &FrameSettings::default())
}

/// Rectangular π pulse on one channel at `rabi_hz`, others off.
pub fn rectangular_pi_pulse(n_channels: usize, channel: usize, rabi_hz: f64) -> crate::dynamics::PulseSequence {
    let mut amplitudes = vec![crate::linalg::C64::new(0.0, 0.0); n_channels];
    amplitudes[channel] = crate::linalg::C64::new(rabi_hz, 0.0);
    crate::dynamics::PulseSequence::new(vec![crate::dynamics::Slice {
        duration: 0.5 / rabi_hz,
        amplitudes_hz: amplitudes,
    }])
}

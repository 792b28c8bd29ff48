//! Spin operators and Hamiltonians for single NV centers and coupled NV pairs.
//!
//! Conventions: parameters are in Hz (or Hz/T, T), Hamiltonians in rad/s.
//! Spin-1 states are ordered `(+1, 0, -1)`, spin-1/2 states `(up, down)`,
//! and an NV block is `electron ⊗ nucleus`. A register is
//! `e_A ⊗ n_A ⊗ e_B ⊗ n_B` with dimensions `[3, 2, 3, 2]`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, eigh, eye, kron, scale, zeros, CMat, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Spin operators `(Sx, Sy, Sz)` in the `m = s, s-1, …, -s` basis.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub x: CMat,
    pub y: CMat,
    pub z: CMat,
}

impl SpinOperators {
    pub fn dot(&self, v: [f64; 3]) -> CMat {
        let n = self.z.nrows();
        let mut out = zeros(n, n);
        for (op, &w) in [&self.x, &self.y, &self.z].into_iter().zip(&v) {
            out += scale(op, c(w));
        }
        out
    }
}

/// Spin operators for spin 1/2 or spin 1.
pub fn spin_operators(spin: f64) -> Result<SpinOperators> {
    let dim = if spin == 0.5 {
        2
    } else if spin == 1.0 {
        3
    } else {
        return Err(Error::UnsupportedSpin(spin));
    };
    let m = |i: usize| spin - i as f64;
    let mut plus = zeros(dim, dim);
    for i in 1..dim {
        // S+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>
        let mi = m(i);
        plus[(i - 1, i)] = c((spin * (spin + 1.0) - mi * (mi + 1.0)).sqrt());
    }
    let minus = plus.adjoint().to_owned();
    let x = scale(&(&plus + &minus), c(0.5));
    let y = scale(&(&plus - &minus), C64::new(0.0, -0.5));
    let z = crate::linalg::diag(&(0..dim).map(|i| c(m(i))).collect::<Vec<_>>());
    Ok(SpinOperators { x, y, z })
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn normalized(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm3(a);
    (n > 0.0 && n.is_finite()).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

/// Parameters of one NV center with a nitrogen nuclear spin-1/2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvParams {
    pub zero_field_splitting_hz: f64,
    pub gyro_e_hz_per_t: f64,
    pub gyro_n_hz_per_t: f64,
    /// Diagonal hyperfine tensor `(Axx, Ayy, Azz)` in the NV frame.
    pub hyperfine_hz: [f64; 3],
    /// Unit vector of the NV symmetry axis in crystal coordinates.
    pub axis: [f64; 3],
}

impl NvParams {
    /// NV center with a 15N nucleus along `axis` (normalized here).
    pub fn nitrogen15(axis: [f64; 3]) -> Result<Self> {
        let axis = normalized(axis).ok_or_else(|| invalid("axis", "zero vector"))?;
        Ok(Self {
            zero_field_splitting_hz: 2.87e9,
            gyro_e_hz_per_t: -28.025e9,
            gyro_n_hz_per_t: -4.316e6,
            hyperfine_hz: [3.65e6, 3.65e6, 3.03e6],
            axis,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if (norm3(self.axis) - 1.0).abs() > 1e-12 {
            return Err(invalid("axis", "must have unit norm"));
        }
        if !(self.zero_field_splitting_hz > 0.0) {
            return Err(invalid("zero_field_splitting_hz", "must be positive"));
        }
        let finite = [self.gyro_e_hz_per_t, self.gyro_n_hz_per_t]
            .iter()
            .chain(&self.hyperfine_hz)
            .all(|v| v.is_finite());
        if !finite || self.gyro_e_hz_per_t == 0.0 {
            return Err(invalid("gyromagnetic ratios", "must be finite and nonzero"));
        }
        Ok(())
    }

    /// Orthonormal NV frame `[x, y, z]` with `z` along the axis and `x`
    /// the in-plane projection of the crystal axis least aligned with `z`.
    pub fn frame(&self) -> [[f64; 3]; 3] {
        let z = self.axis;
        let k = (0..3)
            .min_by(|&i, &j| z[i].abs().total_cmp(&z[j].abs()))
            .unwrap_or(0);
        let mut e = [0.0; 3];
        e[k] = 1.0;
        let p = dot3(e, z);
        let x = normalized([e[0] - p * z[0], e[1] - p * z[1], e[2] - p * z[2]])
            .unwrap_or([1.0, 0.0, 0.0]);
        let y = cross(z, x);
        [x, y, z]
    }

    /// Components of a crystal-frame vector in the NV frame.
    pub fn to_nv_frame(&self, v: [f64; 3]) -> [f64; 3] {
        let f = self.frame();
        [dot3(f[0], v), dot3(f[1], v), dot3(f[2], v)]
    }
}

/// The four contributions to a single-NV Hamiltonian (6×6, rad/s).
#[derive(Clone, Debug)]
pub struct NvTerms {
    pub zero_field: CMat,
    pub electron_zeeman: CMat,
    pub nuclear_zeeman: CMat,
    pub hyperfine: CMat,
}

impl NvTerms {
    pub fn total(&self) -> CMat {
        &(&self.zero_field + &self.electron_zeeman) + &(&self.nuclear_zeeman + &self.hyperfine)
    }

    /// Zero-field splitting plus electron Zeeman.
    pub fn frame_part(&self) -> CMat {
        &self.zero_field + &self.electron_zeeman
    }

    pub fn residual(&self) -> CMat {
        &self.nuclear_zeeman + &self.hyperfine
    }
}

pub fn nv_terms(p: &NvParams, field_t: [f64; 3]) -> Result<NvTerms> {
    p.validate()?;
    let s = spin_operators(1.0)?;
    let i = spin_operators(0.5)?;
    let b = p.to_nv_frame(field_t);
    let e3 = eye(3);
    let e2 = eye(2);
    let zfs = scale(&(&s.z * &s.z), c(TAU * p.zero_field_splitting_hz));
    let ez = scale(&s.dot(b), c(-TAU * p.gyro_e_hz_per_t));
    let nz = scale(&i.dot(b), c(-TAU * p.gyro_n_hz_per_t));
    let mut hf = zeros(6, 6);
    for (k, (so, io)) in [(&s.x, &i.x), (&s.y, &i.y), (&s.z, &i.z)]
        .into_iter()
        .enumerate()
    {
        hf += scale(&kron(so, io), c(TAU * p.hyperfine_hz[k]));
    }
    Ok(NvTerms {
        zero_field: kron(&zfs, &e2),
        electron_zeeman: kron(&ez, &e2),
        nuclear_zeeman: kron(&e3, &nz),
        hyperfine: hf,
    })
}

/// Full 6×6 Hamiltonian of one NV center in a static field (tesla).
pub fn build_single_nv(p: &NvParams, field_t: [f64; 3]) -> Result<CMat> {
    Ok(nv_terms(p, field_t)?.total())
}

/// Electron-dominated energy levels of one NV: nuclear splitting of the
/// `m_s` manifold in Hz (the two eigenstates with the largest `m_s` weight).
pub fn manifold_nuclear_splitting(p: &NvParams, field_t: [f64; 3], ms: i32) -> Result<f64> {
    if !(-1..=1).contains(&ms) {
        return Err(invalid("ms", "must be -1, 0 or 1"));
    }
    let h = build_single_nv(p, field_t)?;
    let e = eigh(&h)?;
    let row = (1 - ms) as usize;
    let mut weights: Vec<(f64, f64)> = (0..6)
        .map(|k| {
            let w = (0..2)
                .map(|n| e.vectors[(2 * row + n, k)].norm_sqr())
                .sum::<f64>();
            (w, e.values[k])
        })
        .collect();
    weights.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok((weights[0].1 - weights[1].1).abs() / TAU)
}

/// Unit field direction with prescribed polar angles to two NV axes.
///
/// Two solutions exist (mirror images through the plane of the axes);
/// `positive_side` picks the one along `a × b`.
pub fn field_direction_from_angles(
    a: [f64; 3],
    b: [f64; 3],
    theta_a: f64,
    theta_b: f64,
    positive_side: bool,
) -> Result<[f64; 3]> {
    let a = normalized(a).ok_or_else(|| invalid("axis", "zero vector"))?;
    let b = normalized(b).ok_or_else(|| invalid("axis", "zero vector"))?;
    let g = dot3(a, b);
    if (1.0 - g * g) < 1e-12 {
        return Err(invalid("axes", "must not be parallel"));
    }
    let (ca, cb) = (theta_a.cos(), theta_b.cos());
    let alpha = (ca - g * cb) / (1.0 - g * g);
    let beta = (cb - g * ca) / (1.0 - g * g);
    let in_plane = alpha * alpha + beta * beta + 2.0 * alpha * beta * g;
    if in_plane > 1.0 + 1e-12 {
        return Err(invalid("angles", "no direction has these angles to both axes"));
    }
    let n = normalized(cross(a, b)).expect("non-parallel axes");
    let gamma = (1.0 - in_plane).max(0.0).sqrt() * if positive_side { 1.0 } else { -1.0 };
    Ok(std::array::from_fn(|k| alpha * a[k] + beta * b[k] + gamma * n[k]))
}

/// Which NV of a register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NvLabel {
    A,
    B,
}

/// Two dipolar-coupled NV centers in a common static field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisterModel {
    pub nv_a: NvParams,
    pub nv_b: NvParams,
    pub static_field_t: [f64; 3],
    pub dipolar_coupling_hz: f64,
    pub separation_m: f64,
}

pub const REGISTER_DIMS: [usize; 4] = [3, 2, 3, 2];

impl RegisterModel {
    /// A 15N NV pair along [111] and [-1 1 -1], 25 nm apart with a 4.93 kHz
    /// coupling, in a 3.41 mT field at 0.133π and 0.695π to the two axes.
    pub fn reference_pair() -> Self {
        let a = [1.0, 1.0, 1.0];
        let b = [-1.0, 1.0, -1.0];
        let u = field_direction_from_angles(a, b, 0.133 * std::f64::consts::PI, 0.695 * std::f64::consts::PI, true)
            .expect("reference angles are consistent");
        let field = 3.41e-3;
        Self {
            nv_a: NvParams::nitrogen15(a).expect("nonzero axis"),
            nv_b: NvParams::nitrogen15(b).expect("nonzero axis"),
            static_field_t: u.map(|x| x * field),
            dipolar_coupling_hz: 4.93e3,
            separation_m: 25e-9,
        }
    }

    pub fn nv(&self, label: NvLabel) -> &NvParams {
        match label {
            NvLabel::A => &self.nv_a,
            NvLabel::B => &self.nv_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nv_a.validate()?;
        self.nv_b.validate()?;
        if !self.static_field_t.iter().all(|v| v.is_finite()) {
            return Err(invalid("static_field_t", "must be finite"));
        }
        if !self.dipolar_coupling_hz.is_finite() {
            return Err(invalid("dipolar_coupling_hz", "must be finite"));
        }
        if !(self.separation_m > 0.0) {
            return Err(invalid("separation_m", "must be positive"));
        }
        Ok(())
    }
}

/// A spin system split into the part that defines the rotating frame and the rest.
#[derive(Clone, Debug)]
pub struct SystemHamiltonian {
    pub dims: Vec<usize>,
    /// Factor indices of each NV, e.g. `[[0, 1], [2, 3]]` for a register.
    pub groups: Vec<Vec<usize>>,
    /// Zero-field splitting plus electron Zeeman of every NV.
    pub frame_part: CMat,
    /// Hyperfine, nuclear Zeeman and dipolar coupling.
    pub residual: CMat,
}

impl SystemHamiltonian {
    pub fn total(&self) -> CMat {
        &self.frame_part + &self.residual
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }
}

pub fn single_nv_system(p: &NvParams, field_t: [f64; 3]) -> Result<SystemHamiltonian> {
    let t = nv_terms(p, field_t)?;
    Ok(SystemHamiltonian {
        dims: vec![3, 2],
        groups: vec![vec![0, 1]],
        frame_part: t.frame_part(),
        residual: t.residual(),
    })
}

/// `Sz_A ⊗ Sz_B` on the 36-level register.
pub fn register_zz() -> CMat {
    let s = spin_operators(1.0).expect("spin 1");
    let e2 = eye(2);
    kron(&kron(&s.z, &e2), &kron(&s.z, &e2))
}

pub fn register_system(model: &RegisterModel) -> Result<SystemHamiltonian> {
    model.validate()?;
    let ta = nv_terms(&model.nv_a, model.static_field_t)?;
    let tb = nv_terms(&model.nv_b, model.static_field_t)?;
    let e6 = eye(6);
    let frame = &kron(&ta.frame_part(), &e6) + &kron(&e6, &tb.frame_part());
    let dip = scale(&register_zz(), c(TAU * model.dipolar_coupling_hz));
    let residual = &(&kron(&ta.residual(), &e6) + &kron(&e6, &tb.residual())) + &dip;
    Ok(SystemHamiltonian {
        dims: REGISTER_DIMS.to_vec(),
        groups: vec![vec![0, 1], vec![2, 3]],
        frame_part: frame,
        residual,
    })
}

/// Full 36×36 register Hamiltonian (rad/s).
pub fn build_register(model: &RegisterModel) -> Result<CMat> {
    Ok(register_system(model)?.total())
}

/// Eigenvectors of the electron zero-field and Zeeman terms of one NV, as the
/// columns of a 3×3 unitary ordered like the bare basis `(+1, 0, -1)`. Each
/// column has a real positive component on its bare state. Energies in rad/s.
pub fn electron_eigenbasis(p: &NvParams, field_t: [f64; 3]) -> Result<(CMat, [f64; 3])> {
    p.validate()?;
    let s = spin_operators(1.0)?;
    let b = p.to_nv_frame(field_t);
    let h = &scale(&(&s.z * &s.z), c(TAU * p.zero_field_splitting_hz))
        + &scale(&s.dot(b), c(-TAU * p.gyro_e_hz_per_t));
    let e = eigh(&h)?;
    let weight = |bare: usize, col: usize| e.vectors[(bare, col)].norm_sqr();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = perms
        .iter()
        .max_by(|x, y| {
            let wx: f64 = (0..3).map(|k| weight(k, x[k])).sum();
            let wy: f64 = (0..3).map(|k| weight(k, y[k])).sum();
            wx.total_cmp(&wy)
        })
        .expect("non-empty");
    let mut w = zeros(3, 3);
    let mut energies = [0.0; 3];
    for (k, &col) in best.iter().enumerate() {
        let d = e.vectors[(k, col)];
        let phase = if d.norm() > 0.0 { d.conj() / d.norm() } else { c(1.0) };
        for r in 0..3 {
            w[(r, k)] = e.vectors[(r, col)] * phase;
        }
        energies[k] = e.values[col];
    }
    Ok((w, energies))
}

/// Basis change from the register's logical basis (electron eigenstates times
/// nuclear states) to the bare basis, as a 36×36 unitary.
pub fn register_logical_basis(model: &RegisterModel) -> Result<CMat> {
    let (wa, _) = electron_eigenbasis(&model.nv_a, model.static_field_t)?;
    let (wb, _) = electron_eigenbasis(&model.nv_b, model.static_field_t)?;
    let e2 = eye(2);
    Ok(kron(&kron(&wa, &e2), &kron(&wb, &e2)))
}

/// Same as [`register_logical_basis`] for a lone NV (6×6).
pub fn single_nv_logical_basis(p: &NvParams, field_t: [f64; 3]) -> Result<CMat> {
    Ok(kron(&electron_eigenbasis(p, field_t)?.0, &eye(2)))
}

/// Transition frequency (Hz) from `m_s = 0` to `m_s = ±1` of one NV,
/// from zero-field splitting and electron Zeeman only.
pub fn electron_resonance_hz(p: &NvParams, field_t: [f64; 3], ms: i32) -> Result<f64> {
    if ms != 1 && ms != -1 {
        return Err(invalid("ms", "must be +1 or -1"));
    }
    let (_, e) = electron_eigenbasis(p, field_t)?;
    Ok((e[if ms == 1 { 0 } else { 2 }] - e[1]) / TAU)
}

/// A microwave channel driving every NV with one linearly polarized field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlChannel {
    pub carrier_hz: f64,
    /// Field direction in crystal coordinates (normalized on use).
    pub polarization: [f64; 3],
    pub max_rabi_hz: f64,
    /// NV whose transverse projection defines the Rabi frequency.
    pub reference: NvLabel,
}

impl ControlChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz >= 0.0) || !self.carrier_hz.is_finite() {
            return Err(invalid("carrier_hz", "must be finite and non-negative"));
        }
        if !(self.max_rabi_hz > 0.0) || !self.max_rabi_hz.is_finite() {
            return Err(invalid("max_rabi_hz", "must be positive"));
        }
        normalized(self.polarization).ok_or_else(|| invalid("polarization", "zero vector"))?;
        Ok(())
    }
}

fn nv_control(p: &NvParams, u: [f64; 3]) -> Result<CMat> {
    let s = spin_operators(1.0)?;
    let i = spin_operators(0.5)?;
    let up = p.to_nv_frame(u);
    let ratio = p.gyro_n_hz_per_t / p.gyro_e_hz_per_t;
    Ok(&kron(&s.dot(up), &eye(2)) + &kron(&eye(3), &scale(&i.dot(up), c(ratio))))
}

fn transverse(p: &NvParams, u: [f64; 3]) -> Result<f64> {
    let z = dot3(u, p.axis);
    let t = (1.0 - z * z).max(0.0).sqrt();
    if t < 1e-9 {
        return Err(Error::ZeroTransverseField);
    }
    Ok(t)
}

/// Control operator `C` such that a field `B1 cos(ωt + φ)` along the channel
/// polarization acts as `Ω C cos(ωt + φ)` with `Ω` the Rabi frequency (rad/s)
/// of the reference NV. Returns `C` and `Ω / B1` in rad/s per tesla.
pub fn register_control(channel: &ControlChannel, model: &RegisterModel) -> Result<(CMat, f64)> {
    channel.validate()?;
    let u = normalized(channel.polarization).expect("validated");
    let t = transverse(model.nv(channel.reference), u)?;
    let e6 = eye(6);
    let op = &kron(&nv_control(&model.nv_a, u)?, &e6) + &kron(&e6, &nv_control(&model.nv_b, u)?);
    let k = std::f64::consts::SQRT_2 / t;
    let rabi_per_tesla = -TAU * model.nv(channel.reference).gyro_e_hz_per_t * t / std::f64::consts::SQRT_2;
    Ok((scale(&op, c(k)), rabi_per_tesla))
}

/// Control operator for a lone NV (6×6), normalized to that NV.
pub fn single_nv_control(channel: &ControlChannel, p: &NvParams) -> Result<CMat> {
    channel.validate()?;
    let u = normalized(channel.polarization).expect("validated");
    let t = transverse(p, u)?;
    Ok(scale(&nv_control(p, u)?, c(std::f64::consts::SQRT_2 / t)))
}

/// Population transferred by a resonant-frame two-level Rabi drive.
///
/// `omega` and `detuning` in rad/s, `t` in seconds.
pub fn rabi_probability(omega: f64, detuning: f64, t: f64) -> f64 {
    let w2 = omega * omega + detuning * detuning;
    if w2 == 0.0 {
        return 0.0;
    }
    omega * omega / w2 * (0.5 * w2.sqrt() * t).sin().powi(2)
}

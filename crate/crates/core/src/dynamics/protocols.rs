//! Gate benchmarking, entangling and storage protocols on simulated registers.
//!
//! The [`Simulator`] keeps states in the logical basis (electron eigenstates of
//! the frame Hamiltonian ordered `(+1, 0, -1)`, nuclear states `(↑, ↓)`).

use super::engine::{Propagator, SubstepPolicy};
use super::noise::{apply_dephasing, initial_state, Layout, NoiseModel};
use super::sequence::PulseSequence;
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    c, embed, expm_hermitian, eye, from_rows, kron, partial_trace, scale, zeros, CMat, C64,
};
use crate::rotframe::RotatingFrame;
use std::f64::consts::{FRAC_1_SQRT_2, TAU};

/// One protocol step.
#[derive(Clone, Debug)]
pub enum Op<'s> {
    /// A control sequence in the rotating frame.
    Pulse(&'s PulseSequence),
    /// An instantaneous unitary in the logical basis.
    Gate(CMat),
    /// Free evolution in the rotating frame for the given time (s).
    Free(f64),
    /// Evolution under a logical-basis Hamiltonian (rad/s) for the given time.
    Hamiltonian(CMat, f64),
}

impl Op<'_> {
    pub fn duration(&self) -> f64 {
        match self {
            Op::Pulse(s) => s.total_duration(),
            Op::Gate(_) => 0.0,
            Op::Free(t) | Op::Hamiltonian(_, t) => *t,
        }
    }
}

/// Runs protocols on one rotating frame.
#[derive(Clone, Debug)]
pub struct Simulator<'a> {
    propagator: Propagator<'a>,
    basis: CMat,
    layout: Layout,
}

impl<'a> Simulator<'a> {
    /// `basis` maps logical to bare coordinates (see `spinsys::register_logical_basis`).
    pub fn new(
        frame: &'a RotatingFrame,
        basis: CMat,
        layout: Layout,
        policy: SubstepPolicy,
    ) -> Result<Self> {
        if basis.nrows() != frame.dim() || layout.dim() != frame.dim() {
            return Err(Error::DimensionMismatch(format!(
                "frame has dimension {}, basis {}, layout {}",
                frame.dim(),
                basis.nrows(),
                layout.dim()
            )));
        }
        Ok(Self {
            propagator: Propagator::new(frame, policy)?,
            basis,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn frame(&self) -> &RotatingFrame {
        self.propagator.frame()
    }

    pub fn basis(&self) -> &CMat {
        &self.basis
    }

    pub fn to_logical(&self, a: &CMat) -> CMat {
        &(self.basis.adjoint() * a) * &self.basis
    }

    pub fn to_bare(&self, a: &CMat) -> CMat {
        &(&self.basis * a) * self.basis.adjoint()
    }

    /// Logical-basis propagator of `seq` started at frame time `t0`.
    pub fn pulse_unitary(&self, seq: &PulseSequence, t0: f64) -> Result<CMat> {
        Ok(self.to_logical(&self.propagator.unitary(seq, t0)?))
    }

    /// Logical-basis propagator of free evolution from `t0` for `duration`.
    pub fn free_unitary(&self, duration: f64, t0: f64) -> Result<CMat> {
        if duration == 0.0 {
            return Ok(eye(self.layout.dim()));
        }
        let seq = PulseSequence::zeros(1, duration, self.frame().n_channels());
        self.pulse_unitary(&seq, t0)
    }

    /// Applies `op` at frame time `t0`; returns the new state and the end time.
    pub fn apply(&self, rho: &CMat, op: &Op, noise: &NoiseModel, t0: f64) -> Result<(CMat, f64)> {
        let conj = |u: &CMat, r: &CMat| &(u * r) * u.adjoint();
        let noisy = noise.t2_dq_s.iter().any(|t| t.is_finite());
        match op {
            Op::Gate(u) => Ok((conj(u, rho), t0)),
            Op::Pulse(seq) => {
                if noisy && noise.during_pulses {
                    let mut r = rho.clone();
                    let mut t = t0;
                    for s in &seq.slices {
                        let single = PulseSequence::new(vec![s.clone()]);
                        r = conj(&self.pulse_unitary(&single, t)?, &r);
                        r = apply_dephasing(&r, &self.layout, noise, s.duration)?;
                        t += s.duration;
                    }
                    Ok((r, t))
                } else {
                    let u = self.pulse_unitary(seq, t0)?;
                    Ok((conj(&u, rho), t0 + seq.total_duration()))
                }
            }
            Op::Free(t) => {
                let r = conj(&self.free_unitary(*t, t0)?, rho);
                Ok((apply_dephasing(&r, &self.layout, noise, *t)?, t0 + t))
            }
            Op::Hamiltonian(h, t) => {
                let r = conj(&expm_hermitian(h, *t)?, rho);
                Ok((apply_dephasing(&r, &self.layout, noise, *t)?, t0 + t))
            }
        }
    }

    /// Applies every step in order, starting at frame time `t0`.
    pub fn run(&self, rho: &CMat, ops: &[Op], noise: &NoiseModel, t0: f64) -> Result<(CMat, f64)> {
        let mut r = rho.clone();
        let mut t = t0;
        for op in ops {
            (r, t) = self.apply(&r, op, noise, t)?;
        }
        Ok((r, t))
    }

    /// Reduced state of the electrons (nuclei traced out).
    pub fn electron_state(&self, rho: &CMat) -> Result<CMat> {
        let nuclei: Vec<usize> = (0..self.layout.dims.len())
            .filter(|f| !self.layout.electrons.contains(f))
            .collect();
        partial_trace(rho, &self.layout.dims, &nuclei)
    }

    /// Population of electron `nv` in logical level `level` (0 is `m_s = +1`).
    pub fn population(&self, rho: &CMat, nv: usize, level: usize) -> Result<f64> {
        let e = *self
            .layout
            .electrons
            .get(nv)
            .ok_or_else(|| invalid("nv", "no such electron"))?;
        let others: Vec<usize> = (0..self.layout.dims.len()).filter(|&f| f != e).collect();
        Ok(partial_trace(rho, &self.layout.dims, &others)?[(level, level)].re)
    }

    /// Embeds a single-electron operator (3×3) on electron `nv`.
    pub fn on_electron(&self, op: &CMat, nv: usize) -> Result<CMat> {
        let e = *self
            .layout
            .electrons
            .get(nv)
            .ok_or_else(|| invalid("nv", "no such electron"))?;
        embed(op, &self.layout.dims, &[e])
    }
}

/// Fit of `y = amplitude · rate^n + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub amplitude: f64,
    pub rate: f64,
    pub offset: f64,
    pub rms: f64,
}

/// Least-squares fit of `A f^n + B` with `f ∈ [0, 1]`.
pub fn fit_decay(n: &[f64], y: &[f64]) -> Result<DecayFit> {
    if n.len() != y.len() || n.len() < 3 {
        return Err(invalid("decay fit", "needs at least three matching points"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if y.iter().all(|v| (v - mean).abs() < 1e-12) {
        return Ok(DecayFit {
            amplitude: 0.0,
            rate: 1.0,
            offset: mean,
            rms: 0.0,
        });
    }
    // For fixed f the model is linear in (A, B).
    let solve = |f: f64| {
        let cols: [Vec<f64>; 2] = [n.iter().map(|&k| f.powf(k)).collect(), vec![1.0; n.len()]];
        let p = least_squares(&cols, y);
        let rss: f64 = (0..n.len())
            .map(|i| (p[0] * cols[0][i] + p[1] - y[i]).powi(2))
            .sum();
        (rss, p)
    };
    let f = minimize_scalar(|f| solve(f).0, 0.0, 1.0, 400);
    let (rss, p) = solve(f);
    Ok(DecayFit {
        amplitude: p[0],
        rate: f,
        offset: p[1],
        rms: (rss / n.len() as f64).sqrt(),
    })
}

/// Least-squares fit of `A f^n + B` with `B` held at `offset` and `f ∈ [0, 1]`.
///
/// With a free offset the rate is unidentifiable when the data barely decay
/// over the window; pinning `B` to the fully mixed value avoids that.
pub fn fit_decay_to(n: &[f64], y: &[f64], offset: f64) -> Result<DecayFit> {
    if n.len() != y.len() || n.len() < 2 {
        return Err(invalid("decay fit", "needs at least two matching points"));
    }
    let solve = |f: f64| {
        let x: Vec<f64> = n.iter().map(|&k| f.powf(k)).collect();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let a = if xx > 0.0 {
            x.iter().zip(y).map(|(v, w)| v * (w - offset)).sum::<f64>() / xx
        } else {
            0.0
        };
        let rss: f64 = x.iter().zip(y).map(|(v, w)| (a * v + offset - w).powi(2)).sum();
        (rss, a)
    };
    let f = minimize_scalar(|f| solve(f).0, 0.0, 1.0, 400);
    let (rss, a) = solve(f);
    Ok(DecayFit {
        amplitude: a,
        rate: f,
        offset,
        rms: (rss / n.len() as f64).sqrt(),
    })
}

/// Fit of `y = a cos(2π f t) + b sin(2π f t) + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SineFit {
    pub frequency_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub rms: f64,
}

/// Least-squares sinusoid fit with the frequency searched in `[f_lo, f_hi]`.
pub fn fit_sinusoid(t: &[f64], y: &[f64], f_lo: f64, f_hi: f64) -> Result<SineFit> {
    if t.len() != y.len() || t.len() < 4 {
        return Err(invalid("sinusoid fit", "needs at least four matching points"));
    }
    if !(f_lo > 0.0 && f_hi > f_lo) {
        return Err(invalid("sinusoid fit", "needs 0 < f_lo < f_hi"));
    }
    let solve = |f: f64| {
        let cols: [Vec<f64>; 3] = [
            t.iter().map(|&x| (TAU * f * x).cos()).collect(),
            t.iter().map(|&x| (TAU * f * x).sin()).collect(),
            vec![1.0; t.len()],
        ];
        let p = least_squares(&cols, y);
        let rss: f64 = (0..t.len())
            .map(|i| (p[0] * cols[0][i] + p[1] * cols[1][i] + p[2] - y[i]).powi(2))
            .sum();
        (rss, p)
    };
    let f = minimize_scalar(|f| solve(f).0, f_lo, f_hi, 2000);
    let (rss, p) = solve(f);
    Ok(SineFit {
        frequency_hz: f,
        amplitude: p[0].hypot(p[1]),
        phase: (-p[1]).atan2(p[0]),
        offset: p[2],
        rms: (rss / t.len() as f64).sqrt(),
    })
}

/// Normal-equation solve for a handful of columns.
fn least_squares<const K: usize>(cols: &[Vec<f64>; K], y: &[f64]) -> [f64; K] {
    let mut a = faer::Mat::<f64>::zeros(K, K);
    let mut b = faer::Mat::<f64>::zeros(K, 1);
    for i in 0..K {
        for j in 0..K {
            a[(i, j)] = cols[i].iter().zip(&cols[j]).map(|(x, z)| x * z).sum();
        }
        b[(i, 0)] = cols[i].iter().zip(y).map(|(x, z)| x * z).sum();
    }
    // Tiny ridge keeps collinear columns (f = 1) solvable.
    for i in 0..K {
        a[(i, i)] += 1e-12 * (1.0 + a[(i, i)]);
    }
    let x = faer::linalg::solvers::Solve::solve(&a.full_piv_lu(), &b);
    std::array::from_fn(|i| x[(i, 0)])
}

/// Grid scan followed by golden-section refinement around the best point.
fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize) -> f64 {
    let step = (hi - lo) / grid as f64;
    let best = (0..=grid)
        .map(|i| lo + i as f64 * step)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .expect("non-empty grid");
    golden_section(&f, (best - step).max(lo), (best + step).min(hi), 1e-12 * (hi - lo))
}

pub(crate) fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    let m = 0.5 * (a + b);
    [a, m, b].into_iter().min_by(|p, q| f(*p).total_cmp(&f(*q))).expect("three points")
}

/// One row of a repeated-gate benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub applications: usize,
    /// Population of NV1 in `m_s = +1`.
    pub target: f64,
    /// Population of NV2 in `m_s = 0`.
    pub spectator: f64,
}

#[derive(Clone, Debug)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    pub target_fit: DecayFit,
    pub spectator_fit: DecayFit,
}

impl BenchmarkTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,f_nv1,f_nv2\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.12e},{:.12e}\n", r.applications, r.target, r.spectator));
        }
        s
    }
}

/// Population of one level of a fully mixed electron.
const MIXED_POPULATION: f64 = 1.0 / 3.0;

/// Applies `[gate, free(τ)]` repeatedly from the initial state and records
/// the populations after `1, 3, …, 2 k_max + 1` applications. Both curves are
/// fitted with `fit_decay_to` towards the fully mixed population.
pub fn repeated_gate_benchmark(
    sim: &Simulator,
    gate: &Op,
    noise: &NoiseModel,
    k_max: usize,
    tau_free: f64,
) -> Result<BenchmarkTable> {
    if sim.layout.electrons.len() != 2 {
        return Err(invalid("benchmark", "needs a two-NV register"));
    }
    if !(tau_free >= 0.0) {
        return Err(invalid("tau_free", "must be non-negative"));
    }
    let mut rho = initial_state(&sim.layout, noise)?;
    let mut t = 0.0;
    let mut rows = Vec::new();
    for n in 1..=(2 * k_max + 1) {
        (rho, t) = sim.apply(&rho, gate, noise, t)?;
        if n % 2 == 1 {
            rows.push(BenchmarkRow {
                applications: n,
                target: sim.population(&rho, 0, 0)?,
                spectator: sim.population(&rho, 1, 1)?,
            });
        }
        (rho, t) = sim.apply(&rho, &Op::Free(tau_free), noise, t)?;
    }
    let n: Vec<f64> = rows.iter().map(|r| r.applications as f64).collect();
    let a: Vec<f64> = rows.iter().map(|r| r.target).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.spectator).collect();
    Ok(BenchmarkTable {
        target_fit: fit_decay_to(&n, &a, MIXED_POPULATION)?,
        spectator_fit: fit_decay_to(&n, &b, MIXED_POPULATION)?,
        rows,
    })
}

/// The three local gates of the entangling sequence, on one electron (3×3).
pub fn entangling_gates() -> [CMat; 3] {
    let s = FRAC_1_SQRT_2;
    let i = C64::new(0.0, 1.0);
    let u1 = from_rows(&[
        &[i * s, c(s), c(0.0)],
        &[c(0.0), c(0.0), c(1.0)],
        &[-i * s, c(s), c(0.0)],
    ]);
    let u2 = crate::linalg::from_real_rows(&[&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
    let u3 = crate::linalg::from_real_rows(&[&[-s, 0.0, s], &[0.0, 1.0, 0.0], &[s, 0.0, s]]);
    [u1, u2, u3]
}

/// `(|++⟩ + i|−−⟩)/√2` on two electrons (9 amplitudes).
pub fn phi_dq() -> Vec<C64> {
    let mut v = vec![c(0.0); 9];
    v[0] = c(FRAC_1_SQRT_2);
    v[8] = C64::new(0.0, FRAC_1_SQRT_2);
    v
}

/// Hamiltonian generating the free evolution between entangling gates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FreeEvolution {
    /// Only `2π ν Sz_A Sz_B`.
    DipolarOnly { dipolar_hz: f64 },
    /// All static terms of the rotating frame.
    Frame,
}

#[derive(Clone, Debug)]
pub struct EntanglingResult {
    /// Reduced state of the two electrons (9×9, logical basis).
    pub electron_state: CMat,
    pub fidelity: f64,
}

/// `U1⊗U1 → free τ/2 → U2⊗U2 → free τ/2 → U3⊗U3` from the initial state.
///
/// `gates` are the three register-wide steps; `detuning_hz` adds a static
/// `2π δ_i Sz_i` per NV during free evolution.
pub fn entangling_protocol(
    sim: &Simulator,
    gates: [Op; 3],
    tau: f64,
    free: FreeEvolution,
    detuning_hz: [f64; 2],
    noise: &NoiseModel,
) -> Result<EntanglingResult> {
    if !(tau >= 0.0) {
        return Err(invalid("tau", "must be non-negative"));
    }
    if sim.layout.electrons.len() != 2 {
        return Err(invalid("entangling protocol", "needs a two-NV register"));
    }
    let sz = crate::linalg::diag(&[c(1.0), c(0.0), c(-1.0)]);
    let mut h_extra = zeros(sim.layout.dim(), sim.layout.dim());
    for (nv, d) in detuning_hz.iter().enumerate() {
        h_extra += scale(&sim.on_electron(&sz, nv)?, c(TAU * d));
    }
    let half = 0.5 * tau;
    let window = |h_base: Option<&CMat>| -> Op<'static> {
        match h_base {
            Some(h) => Op::Hamiltonian(h + &h_extra, half),
            None => Op::Hamiltonian(h_extra.clone(), half),
        }
    };
    let dipolar = match free {
        FreeEvolution::DipolarOnly { dipolar_hz } => {
            let zz = &sim.on_electron(&sz, 0)? * &sim.on_electron(&sz, 1)?;
            Some(scale(&zz, c(TAU * dipolar_hz)))
        }
        FreeEvolution::Frame => None,
    };
    let mut rho = initial_state(&sim.layout, noise)?;
    let mut t = 0.0;
    let [g1, g2, g3] = gates;
    for (k, g) in [g1, g2, g3].iter().enumerate() {
        (rho, t) = sim.apply(&rho, g, noise, t)?;
        if k < 2 {
            (rho, t) = match &dipolar {
                Some(h) => sim.apply(&rho, &window(Some(h)), noise, t)?,
                None => {
                    // Frame evolution commutes with the electron-diagonal extra term.
                    let (r, t1) = sim.apply(&rho, &Op::Free(half), noise, t)?;
                    let u = expm_hermitian(&h_extra, half)?;
                    (&(&u * &r) * u.adjoint(), t1)
                }
            };
        }
    }
    let e = sim.electron_state(&rho)?;
    let phi = crate::linalg::ket(&phi_dq());
    let fidelity = (phi.adjoint() * &e * &phi)[(0, 0)].re;
    Ok(EntanglingResult {
        electron_state: e,
        fidelity,
    })
}

/// Ideal register-wide local gate `U ⊗ U` (each `U` on one electron).
pub fn local_pair(sim: &Simulator, u: &CMat) -> Result<CMat> {
    Ok(&sim.on_electron(u, 0)? * &sim.on_electron(u, 1)?)
}

/// The partial SWAP exchanging `|+1,↑⟩` and `|-1,↓⟩` on one NV (6×6).
pub fn partial_swap() -> CMat {
    let mut s = eye(6);
    s[(0, 0)] = c(0.0);
    s[(5, 5)] = c(0.0);
    s[(0, 5)] = c(1.0);
    s[(5, 0)] = c(1.0);
    s
}

/// Outcome of one store-and-retrieve cycle.
#[derive(Clone, Debug)]
pub struct StorageResult {
    /// `|coherence after| / |coherence before|`.
    pub efficiency: f64,
    /// `⟨+1|ρ_e|−1⟩` before storage and after retrieval.
    pub before: C64,
    pub after: C64,
    pub electron_state: CMat,
}

/// Stores an electron `(+1, -1)` coherence in the nitrogen spin and retrieves it.
///
/// The electron is prepared with the first entangling gate from the initial
/// state, with the nucleus in `nuclear_state` (2×2). After the SWAP the
/// electron sits in `m_s = +1`; it is shelved to `m_s = 0` for the storage
/// period and brought back before the second SWAP.
pub fn swap_protocol(
    sim: &Simulator,
    swap: &Op,
    noise: &NoiseModel,
    nuclear_state: &CMat,
    storage_time: f64,
) -> Result<StorageResult> {
    if sim.layout.dims != [3, 2] {
        return Err(invalid("swap protocol", "needs a single-NV layout"));
    }
    if !(storage_time >= 0.0) {
        return Err(invalid("storage_time", "must be non-negative"));
    }
    let full = initial_state(&sim.layout, noise)?;
    let electron = partial_trace(&full, &sim.layout.dims, &[1])?;
    let mut rho = kron(&electron, nuclear_state);
    let prep = Op::Gate(sim.on_electron(&entangling_gates()[0], 0)?);
    let mut t = 0.0;
    (rho, t) = sim.apply(&rho, &prep, noise, t)?;
    let coherence = |r: &CMat| -> Result<C64> { Ok(sim.electron_state(r)?[(0, 2)]) };
    let before = coherence(&rho)?;
    let shelve =
        crate::linalg::from_real_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
    let shelve = Op::Gate(sim.on_electron(&shelve, 0)?);
    let steps = [
        swap.clone(),
        shelve.clone(),
        Op::Free(storage_time),
        shelve,
        swap.clone(),
    ];
    (rho, _) = sim.run(&rho, &steps, noise, t)?;
    let after = coherence(&rho)?;
    let e = sim.electron_state(&rho)?;
    if before.norm() == 0.0 {
        return Err(invalid("swap protocol", "no initial coherence"));
    }
    Ok(StorageResult {
        efficiency: after.norm() / before.norm(),
        before,
        after,
        electron_state: e,
    })
}

/// Storage sweep row: storage time (s), efficiency, retrieved coherence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StorageRow {
    pub storage_time: f64,
    pub efficiency: f64,
    pub coherence: C64,
}

pub fn storage_sweep(
    sim: &Simulator,
    swap: &Op,
    noise: &NoiseModel,
    nuclear_state: &CMat,
    times: &[f64],
) -> Result<Vec<StorageRow>> {
    times
        .iter()
        .map(|&t| {
            let r = swap_protocol(sim, swap, noise, nuclear_state, t)?;
            Ok(StorageRow {
                storage_time: t,
                efficiency: r.efficiency,
                coherence: r.after / r.before,
            })
        })
        .collect()
}

pub fn storage_csv(rows: &[StorageRow]) -> String {
    let mut s = String::from("t_s,eff,phase_rad,re\n");
    for r in rows {
        s.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.storage_time,
            r.efficiency,
            r.coherence.arg(),
            r.coherence.re
        ));
    }
    s
}

#[cfg(test)]
fn purity(rho: &CMat) -> f64 {
    crate::linalg::trace(&(rho * rho)).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, projector};
    use crate::rotframe::FrameSettings;
    use crate::spinsys::{
        register_logical_basis, register_system, single_nv_logical_basis, single_nv_system,
        RegisterModel,
    };

    fn register_sim(frame: &RotatingFrame) -> Simulator<'_> {
        let m = RegisterModel::reference_pair();
        let w = register_logical_basis(&m).unwrap();
        Simulator::new(frame, w, Layout::register(), SubstepPolicy::default()).unwrap()
    }

    fn register_frame() -> RotatingFrame {
        let m = RegisterModel::reference_pair();
        let sys = register_system(&m).unwrap();
        RotatingFrame::build(&sys, &[], &FrameSettings::default()).unwrap()
    }

    fn ideal_gates(sim: &Simulator) -> [Op<'static>; 3] {
        let [a, b, c3] = entangling_gates();
        [
            Op::Gate(local_pair(sim, &a).unwrap()),
            Op::Gate(local_pair(sim, &b).unwrap()),
            Op::Gate(local_pair(sim, &c3).unwrap()),
        ]
    }

    const NU: f64 = 4.93e3;

    #[test]
    fn gate_matrices_map_as_described() {
        let [u1, u2, u3] = entangling_gates();
        for u in [&u1, &u2, &u3] {
            assert!(crate::linalg::unitary_distance(&(u.adjoint() * u), &eye(3)) < 1e-15);
        }
        let s = FRAC_1_SQRT_2;
        let plus = &u1 * &crate::linalg::ket(&[c(0.0), c(1.0), c(0.0)]);
        assert!((plus[(0, 0)] - c(s)).norm() < 1e-15 && (plus[(2, 0)] - c(s)).norm() < 1e-15);
        assert!(max_abs_diff(&(&u2 * &u2), &eye(3)) == 0.0);
    }

    #[test]
    fn ideal_entangling_sequence_reaches_phi_dq() {
        let f = register_frame();
        let sim = register_sim(&f);
        let free = FreeEvolution::DipolarOnly { dipolar_hz: NU };
        let tau = 1.0 / (8.0 * NU);
        let noise = NoiseModel::noiseless(2);
        let r = entangling_protocol(&sim, ideal_gates(&sim), tau, free, [0.0; 2], &noise).unwrap();
        assert!((r.fidelity - 1.0).abs() < 1e-9, "{}", r.fidelity);
        let one = partial_trace(&r.electron_state, &[3, 3], &[1]).unwrap();
        assert!((purity(&one) - 0.5).abs() < 1e-9);
        let r0 = entangling_protocol(&sim, ideal_gates(&sim), 0.0, free, [0.0; 2], &noise).unwrap();
        assert!((r0.fidelity - 0.5).abs() < 1e-9, "{}", r0.fidelity);
        // The echo removes a static detuning.
        let rd = entangling_protocol(&sim, ideal_gates(&sim), tau, free, [3e5, 0.0], &noise).unwrap();
        assert!((rd.fidelity - 1.0).abs() < 1e-9, "{}", rd.fidelity);
    }

    #[test]
    fn frame_free_evolution_is_echoed() {
        let f = register_frame();
        let sim = register_sim(&f);
        let tau = 1.0 / (8.0 * NU);
        let noise = NoiseModel::noiseless(2);
        let run = |d: [f64; 2]| {
            entangling_protocol(&sim, ideal_gates(&sim), tau, FreeEvolution::Frame, d, &noise)
                .unwrap()
                .fidelity
        };
        let f0 = run([0.0; 2]);
        // Hyperfine terms tilt the nuclear axes differently per manifold, which
        // the echo cannot fully undo.
        assert!(f0 > 0.99, "{f0}");
        assert!((run([2e5, -1e5]) - f0).abs() < 1e-9);
    }

    #[test]
    fn decoherence_limited_fidelity() {
        let f = register_frame();
        let sim = register_sim(&f);
        let free = FreeEvolution::DipolarOnly { dipolar_hz: NU };
        let tau = 1.0 / (8.0 * NU);
        let r = entangling_protocol(&sim, ideal_gates(&sim), tau, free, [0.0; 2], &NoiseModel::reference_pair())
            .unwrap();
        assert!((r.fidelity - 0.8483).abs() < 1e-3, "{}", r.fidelity);
    }

    #[test]
    fn decay_fit_recovers_parameters() {
        let n: Vec<f64> = (0..18).map(|k| (2 * k + 1) as f64).collect();
        let y: Vec<f64> = n.iter().map(|&k| 0.45 * 0.97f64.powf(k) + 0.5).collect();
        let fit = fit_decay(&n, &y).unwrap();
        assert!((fit.rate - 0.97).abs() < 1e-6 && (fit.amplitude - 0.45).abs() < 1e-4, "{fit:?}");
        let flat = fit_decay(&n, &vec![1.0; n.len()]).unwrap();
        assert_eq!(flat.rate, 1.0);
        let pinned = fit_decay_to(&n, &y.iter().map(|v| v - 0.5 + 1.0 / 3.0).collect::<Vec<_>>(), 1.0 / 3.0).unwrap();
        assert!((pinned.rate - 0.97).abs() < 1e-6 && (pinned.amplitude - 0.45).abs() < 1e-6, "{pinned:?}");
        // Nearly flat data with a small wiggle: the pinned rate stays near one.
        let wiggle: Vec<f64> = n.iter().map(|&k| 0.9995 + 2e-4 * (0.7 * k).sin()).collect();
        assert!(fit_decay_to(&n, &wiggle, 1.0 / 3.0).unwrap().rate > 0.9999);
    }

    #[test]
    fn sinusoid_fit_recovers_frequency() {
        let t: Vec<f64> = (0..60).map(|k| k as f64 * 2e-6).collect();
        let y: Vec<f64> = t.iter().map(|&x| 0.3 * (TAU * 93.7e3 * x + 0.4).cos() + 0.1).collect();
        let fit = fit_sinusoid(&t, &y, 10e3, 240e3).unwrap();
        assert!((fit.frequency_hz - 93.7e3).abs() < 1.0, "{fit:?}");
        assert!((fit.phase - 0.4).abs() < 1e-6 && (fit.amplitude - 0.3).abs() < 1e-6);
    }

    #[test]
    fn swap_storage_round_trip() {
        let s = partial_swap();
        assert_eq!(max_abs_diff(&(&s * &s), &eye(6)), 0.0);
        let m = RegisterModel::reference_pair();
        let sys = single_nv_system(&m.nv_a, m.static_field_t).unwrap();
        let f = RotatingFrame::build(&sys, &[], &FrameSettings::default()).unwrap();
        let w = single_nv_logical_basis(&m.nv_a, m.static_field_t).unwrap();
        let sim = Simulator::new(&f, w, Layout::single_nv(), SubstepPolicy::default()).unwrap();
        let down = projector(&[c(0.0), c(1.0)]);
        let noise = NoiseModel::noiseless(1);
        let r = swap_protocol(&sim, &Op::Gate(s.clone()), &noise, &down, 0.0).unwrap();
        assert!((r.efficiency - 1.0).abs() < 1e-12, "{}", r.efficiency);
        // Without the SWAP the electron coherence dephases during storage.
        let mut noisy = NoiseModel::reference_pair();
        noisy.t2_dq_s.truncate(1);
        noisy.t2_star_s.truncate(1);
        noisy.polarization = vec![1.0];
        let stored = swap_protocol(&sim, &Op::Gate(s), &noisy, &down, 300e-6).unwrap();
        let unstored = swap_protocol(&sim, &Op::Gate(eye(6)), &noisy, &down, 300e-6).unwrap();
        // The shelved electron carries no coherence, so storage is immune to its dephasing.
        let clean = swap_protocol(&sim, &Op::Gate(partial_swap()), &noise, &down, 300e-6).unwrap();
        assert!((stored.efficiency - clean.efficiency).abs() < 1e-12);
        assert!(unstored.efficiency < stored.efficiency);
    }
}

//! Piecewise-constant propagation in a rotating frame, with exact gradients.
//!
//! Every slice is split into substeps. A substep is a product of one or more
//! exponentials `exp(-i dt H_e)`, where `H_e` is a weighted sum of frame
//! Hamiltonians sampled inside the substep: the midpoint rule uses one sample,
//! the fourth-order commutator-free Magnus rule two exponentials over the two
//! Gauss points.
//!
//! Two interchangeable back ends evaluate the exponentials. The dense one
//! diagonalizes `H_e`. The product one applies when the frame Hamiltonian is
//! `h_A(t) ⊗ 1 + 1 ⊗ h_B(t) + C_A ⊗ C_B` with a static coupling, and uses the
//! symmetric splitting `e^{-iC dt/2} (e^{-i h_A dt} ⊗ e^{-i h_B dt}) e^{-iC dt/2}`
//! in the eigenbasis of the coupling.

use super::sequence::PulseSequence;
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, eigh, eye, kron, scale, zeros, CMat, Eigh, C64};
use crate::rotframe::{add_hermitian_pair, RotatingFrame};
use faer::Mat;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integrator {
    /// One exponential of the midpoint Hamiltonian per substep.
    #[default]
    Midpoint,
    /// Fourth-order commutator-free Magnus rule (two exponentials per substep).
    Magnus4,
}

/// How finely rotating terms are resolved: each slice is split so that
/// `max|ω| · dt ≤ max_phase`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubstepPolicy {
    pub max_phase: f64,
    pub integrator: Integrator,
}

impl Default for SubstepPolicy {
    fn default() -> Self {
        Self {
            max_phase: 0.1,
            integrator: Integrator::Midpoint,
        }
    }
}

impl SubstepPolicy {
    pub fn magnus4(max_phase: f64) -> Self {
        Self {
            max_phase,
            integrator: Integrator::Magnus4,
        }
    }
}

/// One exponential `exp(-i dt Σ_s w_s H(t_s))`.
#[derive(Clone, Copy, Debug)]
struct Exp {
    slice: usize,
    dt: f64,
    samples: [(f64, f64); 2],
    n_samples: usize,
}

impl Exp {
    fn samples(&self) -> &[(f64, f64)] {
        &self.samples[..self.n_samples]
    }

    fn static_weight(&self) -> f64 {
        self.samples().iter().map(|s| s.1).sum()
    }

    /// `½ Σ_s w_s e^{iω t_s}`: the factor multiplying `z X` in `H_e`.
    fn phase(&self, omega: f64) -> C64 {
        self.samples()
            .iter()
            .map(|&(t, w)| C64::from_polar(0.5 * w, omega * t))
            .sum()
    }
}

fn schedule(frame: &RotatingFrame, seq: &PulseSequence, policy: SubstepPolicy, t0: f64) -> Vec<Exp> {
    let w = if frame.is_static() { 0.0 } else { frame.max_frequency() };
    let mut out = Vec::new();
    let mut t = t0;
    let r3 = 3f64.sqrt();
    let a1 = (3.0 - 2.0 * r3) / 12.0;
    let a2 = (3.0 + 2.0 * r3) / 12.0;
    for (i, s) in seq.slices.iter().enumerate() {
        let n = if w == 0.0 {
            1
        } else {
            ((w * s.duration / policy.max_phase).ceil() as usize).max(1)
        };
        let dt = s.duration / n as f64;
        for j in 0..n {
            let start = t + j as f64 * dt;
            if w == 0.0 || policy.integrator == Integrator::Midpoint {
                out.push(Exp {
                    slice: i,
                    dt,
                    samples: [(start + 0.5 * dt, 1.0), (0.0, 0.0)],
                    n_samples: 1,
                });
            } else {
                let t1 = start + (0.5 - r3 / 6.0) * dt;
                let t2 = start + (0.5 + r3 / 6.0) * dt;
                out.push(Exp {
                    slice: i,
                    dt,
                    samples: [(t1, a2), (t2, a1)],
                    n_samples: 2,
                });
                out.push(Exp {
                    slice: i,
                    dt,
                    samples: [(t1, a1), (t2, a2)],
                    n_samples: 2,
                });
            }
        }
        t += s.duration;
    }
    out
}

/// `exp(-i λ dt)` in the eigenbasis.
fn expm_from(e: &Eigh, dt: f64) -> CMat {
    e.apply(|x| C64::from_polar(1.0, -x * dt))
}

/// Given `N`, returns `G` such that `tr(N dU) = tr(G dH)` for `U = exp(-iH dt)`.
fn adjoint_generator(e: &Eigh, n: &CMat, dt: f64) -> CMat {
    let v = &e.vectors;
    let nt = &(v.adjoint() * n) * v;
    let d = v.nrows();
    let lam = &e.values;
    // F_ij = (e^{-iλ_i dt} - e^{-iλ_j dt}) / (λ_i - λ_j), written stably.
    let f = |i: usize, j: usize| {
        let x = 0.5 * (lam[i] - lam[j]) * dt;
        let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
        C64::from_polar(dt * sinc, -0.5 * (lam[i] + lam[j]) * dt) * C64::new(0.0, -1.0)
    };
    let gamma = Mat::from_fn(d, d, |i, j| nt[(i, j)] * f(j, i));
    &(v * &gamma) * v.adjoint()
}

/// `(tr(G X), tr(G X†))`.
fn trace_with(g: &CMat, x: &CMat) -> (C64, C64) {
    let mut a = c(0.0);
    let mut b = c(0.0);
    for j in 0..g.ncols() {
        let gcol = g.col_as_slice(j);
        let xcol = x.col_as_slice(j);
        for (i, &gij) in gcol.iter().enumerate() {
            // tr(G X) = Σ G_ij X_ji
            a += gij * x.col_as_slice(i)[j];
            b += gij * xcol[i].conj();
        }
    }
    (a, b)
}

/// Gradient `(∂/∂x, ∂/∂y)` of a control term whose coefficient in `H_e` is `p · z`.
fn term_gradient(tr_gx: C64, tr_gxd: C64, p: C64) -> (f64, f64) {
    let dx = p * tr_gx + p.conj() * tr_gxd;
    let dy = C64::new(0.0, 1.0) * (p * tr_gx - p.conj() * tr_gxd);
    (dx.re, dy.re)
}

/// `H_e` for the dense back end.
fn dense_hamiltonian(frame: &RotatingFrame, z: &[C64], e: &Exp) -> CMat {
    let mut h = scale(&frame.residual_static, c(e.static_weight()));
    for term in &frame.terms {
        let p = e.phase(term.frequency);
        let coef = match term.channel {
            Some(k) => z[k] * p,
            None => p * 2.0,
        };
        if coef != c(0.0) {
            add_hermitian_pair(&mut h, &term.operator, coef);
        }
    }
    h
}

/// `m[i,j] *= l[i] · r[j]`.
fn scale_rows_cols(m: &mut CMat, l: &[C64], r: &[C64]) {
    for (j, &rj) in r.iter().enumerate() {
        let col = m.col_as_slice_mut(j);
        for (x, &li) in col.iter_mut().zip(l) {
            *x *= li * rj;
        }
    }
}

/// Partial traces of a `(da·db)`-square matrix over `B` and over `A`.
fn partial_traces(k: &CMat, da: usize, db: usize) -> (CMat, CMat) {
    let mut ta = zeros(da, da);
    let mut tb = zeros(db, db);
    for ja in 0..da {
        for jb in 0..db {
            let col = k.col_as_slice(ja * db + jb);
            for ia in 0..da {
                ta[(ia, ja)] += col[ia * db + jb];
                if ia == ja {
                    for ib in 0..db {
                        tb[(ib, jb)] += col[ia * db + ib];
                    }
                }
            }
        }
    }
    (ta, tb)
}

#[derive(Clone, Debug)]
struct LocalTerm {
    frequency: f64,
    channel: Option<usize>,
    a: CMat,
    b: CMat,
}

/// Frame Hamiltonian split into two local parts and a rank-one static coupling,
/// expressed in the eigenbasis of the coupling factors.
#[derive(Clone, Debug)]
struct ProductModel {
    da: usize,
    db: usize,
    basis: CMat,
    ha0: CMat,
    hb0: CMat,
    za: Vec<f64>,
    zb: Vec<f64>,
    terms: Vec<LocalTerm>,
}

/// `x = x_A ⊗ 1 + 1 ⊗ x_B` with `tr x_B = 0`, if `x` has that form.
fn split_local(x: &CMat, da: usize, db: usize) -> Option<(CMat, CMat)> {
    let (xa, xb) = local_parts(x, da, db);
    let rebuilt = &kron(&xa, &eye(db)) + &kron(&eye(da), &xb);
    let err = (x - &rebuilt).norm_l2();
    (err <= 1e-10 * (x.norm_l2() + 1.0)).then_some((xa, xb))
}

fn local_parts(x: &CMat, da: usize, db: usize) -> (CMat, CMat) {
    let (ta, tb) = partial_traces(x, da, db);
    let tr = crate::linalg::trace(x) / (da * db) as f64;
    let xa = scale(&ta, c(1.0 / db as f64));
    let xb = &scale(&tb, c(1.0 / da as f64)) - &scale(&eye(db), tr);
    (xa, xb)
}

impl ProductModel {
    fn from_frame(frame: &RotatingFrame) -> Option<Self> {
        if frame.groups.len() != 2 {
            return None;
        }
        let split = frame.groups[0].len();
        let contiguous = frame.groups[0].iter().copied().eq(0..split)
            && frame.groups[1].iter().copied().eq(split..frame.dims.len());
        if !contiguous {
            return None;
        }
        let da: usize = frame.dims[..split].iter().product();
        let db: usize = frame.dims[split..].iter().product();
        let r = &frame.residual_static;
        let (ha, hb) = local_parts(r, da, db);
        let coupling = &(r - &kron(&ha, &eye(db))) - &kron(&eye(da), &hb);
        let (ca, cb) = rank_one_factors(&coupling, da, db)?;
        let ea = eigh(&ca).ok()?;
        let eb = eigh(&cb).ok()?;
        let (wa, wb) = (ea.vectors, eb.vectors);
        let to_a = |m: &CMat| &(wa.adjoint() * m) * &wa;
        let to_b = |m: &CMat| &(wb.adjoint() * m) * &wb;
        let mut terms = Vec::new();
        for t in &frame.terms {
            let (xa, xb) = split_local(&t.operator, da, db)?;
            terms.push(LocalTerm {
                frequency: t.frequency,
                channel: t.channel,
                a: to_a(&xa),
                b: to_b(&xb),
            });
        }
        Some(Self {
            da,
            db,
            basis: kron(&wa, &wb),
            ha0: to_a(&ha),
            hb0: to_b(&hb),
            za: ea.values,
            zb: eb.values,
            terms,
        })
    }

    fn local_hamiltonians(&self, z: &[C64], e: &Exp) -> (CMat, CMat) {
        let w = c(e.static_weight());
        let mut ha = scale(&self.ha0, w);
        let mut hb = scale(&self.hb0, w);
        for term in &self.terms {
            let p = e.phase(term.frequency);
            let coef = match term.channel {
                Some(k) => z[k] * p,
                None => p * 2.0,
            };
            if coef != c(0.0) {
                add_hermitian_pair(&mut ha, &term.a, coef);
                add_hermitian_pair(&mut hb, &term.b, coef);
            }
        }
        (ha, hb)
    }

    /// Diagonal of `exp(-i w C dt / 2)`.
    fn half_coupling(&self, e: &Exp) -> Vec<C64> {
        let s = -0.5 * e.static_weight() * e.dt;
        let mut d = Vec::with_capacity(self.da * self.db);
        for &a in &self.za {
            for &b in &self.zb {
                d.push(C64::from_polar(1.0, s * a * b));
            }
        }
        d
    }
}

/// Factors a (Hermitian) operator as `A ⊗ B` with Hermitian factors, if its
/// operator-Schmidt rank is at most one.
fn rank_one_factors(x: &CMat, da: usize, db: usize) -> Option<(CMat, CMat)> {
    let norm = x.norm_l2();
    if norm < 1e-300 {
        return Some((zeros(da, da), zeros(db, db)));
    }
    // M[(i,j),(k,l)] = X[(i,k),(j,l)]
    let m = Mat::from_fn(da * da, db * db, |p, q| {
        let (i, j) = (p / da, p % da);
        let (k, l) = (q / db, q % db);
        x[(i * db + k, j * db + l)]
    });
    let svd = m.thin_svd().ok()?;
    let s = svd.S().column_vector();
    if s.nrows() > 1 && s[1].re > 1e-9 * s[0].re {
        return None;
    }
    let u = svd.U();
    let v = svd.V();
    let mut a = Mat::from_fn(da, da, |i, j| u[(i * da + j, 0)]);
    let mut b = Mat::from_fn(db, db, |k, l| v[(k * db + l, 0)].conj() * s[0]);
    // Remove the arbitrary phase so both factors are Hermitian.
    let theta = crate::linalg::trace(&(&a * &a)).arg() / 2.0;
    a = scale(&a, C64::from_polar(1.0, -theta));
    b = scale(&b, C64::from_polar(1.0, theta));
    let (a, b) = (crate::linalg::hermitian_part(&a), crate::linalg::hermitian_part(&b));
    ((x - &kron(&a, &b)).norm_l2() <= 1e-9 * norm).then_some((a, b))
}

struct ProductExp {
    u: CMat,
    ea: Eigh,
    eb: Eigh,
    ua: CMat,
    ub: CMat,
    half: Vec<C64>,
}

fn product_exp(pm: &ProductModel, z: &[C64], e: &Exp, full: bool) -> Result<ProductExp> {
    let (ha, hb) = pm.local_hamiltonians(z, e);
    let ea = eigh(&ha)?;
    let eb = eigh(&hb)?;
    let ua = expm_from(&ea, e.dt);
    let ub = expm_from(&eb, e.dt);
    let half = pm.half_coupling(e);
    let u = if full {
        let mut u = kron(&ua, &ub);
        scale_rows_cols(&mut u, &half, &half);
        u
    } else {
        zeros(0, 0)
    };
    Ok(ProductExp { u, ea, eb, ua, ub, half })
}

/// Propagator for one frame, reusable across sequences.
#[derive(Clone, Debug)]
pub struct Propagator<'a> {
    frame: &'a RotatingFrame,
    policy: SubstepPolicy,
    product: Option<ProductModel>,
}

impl<'a> Propagator<'a> {
    /// Uses the product back end for time-dependent frames that allow it.
    pub fn new(frame: &'a RotatingFrame, policy: SubstepPolicy) -> Result<Self> {
        if !(policy.max_phase > 0.0) || !policy.max_phase.is_finite() {
            return Err(invalid("max_phase", "must be positive"));
        }
        let product = if frame.is_static() {
            None
        } else {
            ProductModel::from_frame(frame)
        };
        Ok(Self {
            frame,
            policy,
            product,
        })
    }

    /// Always uses dense exponentials.
    pub fn dense(frame: &'a RotatingFrame, policy: SubstepPolicy) -> Result<Self> {
        let mut p = Self::new(frame, policy)?;
        p.product = None;
        Ok(p)
    }

    pub fn frame(&self) -> &RotatingFrame {
        self.frame
    }

    pub fn policy(&self) -> SubstepPolicy {
        self.policy
    }

    pub fn is_product(&self) -> bool {
        self.product.is_some()
    }

    /// Number of matrix exponentials needed for `seq`.
    pub fn exponential_count(&self, seq: &PulseSequence) -> usize {
        schedule(self.frame, seq, self.policy, 0.0).len()
    }

    fn check(&self, seq: &PulseSequence) -> Result<()> {
        let k = self.frame.n_channels();
        for s in &seq.slices {
            if s.amplitudes_hz.len() != k {
                return Err(Error::ChannelCountMismatch {
                    expected: k,
                    got: s.amplitudes_hz.len(),
                });
            }
            if !(s.duration > 0.0) || !s.duration.is_finite() {
                return Err(invalid("duration", "must be positive and finite"));
            }
            if s.amplitudes_hz.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(invalid("amplitude", "must be finite"));
            }
        }
        Ok(())
    }

    /// Frame propagator of `seq` started at frame time `t0`.
    pub fn unitary(&self, seq: &PulseSequence, t0: f64) -> Result<CMat> {
        self.check(seq)?;
        let steps = schedule(self.frame, seq, self.policy, t0);
        let controls: Vec<Vec<C64>> = seq.slices.iter().map(|s| s.controls()).collect();
        let mut u = eye(self.frame.dim());
        match &self.product {
            None => {
                for e in &steps {
                    let h = dense_hamiltonian(self.frame, &controls[e.slice], e);
                    u = &expm_from(&eigh(&h)?, e.dt) * &u;
                }
                Ok(u)
            }
            Some(pm) => {
                for e in &steps {
                    let pe = product_exp(pm, &controls[e.slice], e, true)?;
                    u = &pe.u * &u;
                }
                Ok(&(&pm.basis * &u) * pm.basis.adjoint())
            }
        }
    }

    /// `∂ Re tr(Λ U) / ∂θ` for every control variable, where `U` is the
    /// propagator of `seq` (passed in, as returned by [`Self::unitary`]).
    ///
    /// Variables are ordered `(slice, channel, [x, y])` with `z = x + iy` in rad/s.
    pub fn trace_gradient(
        &self,
        seq: &PulseSequence,
        t0: f64,
        u: &CMat,
        lambda: &CMat,
    ) -> Result<Vec<f64>> {
        self.check(seq)?;
        let nk = self.frame.n_channels();
        let mut grad = vec![0.0; seq.len() * nk * 2];
        let steps = schedule(self.frame, seq, self.policy, t0);
        let controls: Vec<Vec<C64>> = seq.slices.iter().map(|s| s.controls()).collect();
        // K_m = X_{m-1} Λ U X_{m-1}†, with X_m the product of the first m exponentials;
        // the contribution of exponential m is tr(K_m U_m† dU_m).
        match &self.product {
            None => {
                let mut k = lambda * u;
                for e in &steps {
                    let h = dense_hamiltonian(self.frame, &controls[e.slice], e);
                    let eig = eigh(&h)?;
                    let um = expm_from(&eig, e.dt);
                    let n = &k * um.adjoint();
                    let g = adjoint_generator(&eig, &n, e.dt);
                    for term in &self.frame.terms {
                        if let Some(ch) = term.channel {
                            let (a, b) = trace_with(&g, &term.operator);
                            let (dx, dy) = term_gradient(a, b, e.phase(term.frequency));
                            let idx = (e.slice * nk + ch) * 2;
                            grad[idx] += dx;
                            grad[idx + 1] += dy;
                        }
                    }
                    k = &(&um * &k) * um.adjoint();
                }
            }
            Some(pm) => {
                let lw = &(pm.basis.adjoint() * lambda) * &pm.basis;
                let uw = &(pm.basis.adjoint() * u) * &pm.basis;
                let mut k = &lw * &uw;
                for e in &steps {
                    let pe = product_exp(pm, &controls[e.slice], e, false)?;
                    let conj: Vec<C64> = pe.half.iter().map(|d| d.conj()).collect();
                    // K' = D K D†; N_A = tr_B(K') u_A†, N_B = tr_A(K') u_B†.
                    scale_rows_cols(&mut k, &pe.half, &conj);
                    let (ta, tb) = partial_traces(&k, pm.da, pm.db);
                    let ga = adjoint_generator(&pe.ea, &(&ta * pe.ua.adjoint()), e.dt);
                    let gb = adjoint_generator(&pe.eb, &(&tb * pe.ub.adjoint()), e.dt);
                    for term in &pm.terms {
                        if let Some(ch) = term.channel {
                            let (a1, b1) = trace_with(&ga, &term.a);
                            let (a2, b2) = trace_with(&gb, &term.b);
                            let p = e.phase(term.frequency);
                            let (dx, dy) = term_gradient(a1 + a2, b1 + b2, p);
                            let idx = (e.slice * nk + ch) * 2;
                            grad[idx] += dx;
                            grad[idx + 1] += dy;
                        }
                    }
                    let kr = kron(&pe.ua, &pe.ub);
                    k = &(&kr * &k) * kr.adjoint();
                    scale_rows_cols(&mut k, &pe.half, &conj);
                }
            }
        }
        Ok(grad)
    }
}

/// Frame propagator of `seq` from frame time 0.
pub fn propagate(frame: &RotatingFrame, seq: &PulseSequence, policy: SubstepPolicy) -> Result<CMat> {
    Propagator::new(frame, policy)?.unitary(seq, 0.0)
}

/// `U ρ U†`.
pub fn conjugate(u: &CMat, rho: &CMat) -> CMat {
    &(u * rho) * u.adjoint()
}

/// Lab-frame propagator of `seq` under `h + Σ_k Re(z_k e^{iω̃_k t}) C_k` for
/// `controls = [(ω̃_k, C_k)]`, with `steps_per_period` steps per period of the
/// fastest frequency present. Each step is the fourth-order commutator-free
/// pair of exponentials sampled at the two Gauss points.
pub fn propagate_lab(
    h: &CMat,
    controls: &[(f64, CMat)],
    seq: &PulseSequence,
    steps_per_period: f64,
) -> Result<CMat> {
    let ev = crate::linalg::eigvalsh(h)?;
    let span = ev[ev.len() - 1] - ev[0];
    let wmax = controls.iter().map(|(w, _)| *w).fold(span, f64::max);
    let mut u = eye(h.nrows());
    let mut t = 0.0;
    for s in &seq.slices {
        if s.amplitudes_hz.len() != controls.len() {
            return Err(Error::ChannelCountMismatch {
                expected: controls.len(),
                got: s.amplitudes_hz.len(),
            });
        }
        let z = s.controls();
        let n = ((wmax * s.duration * steps_per_period / std::f64::consts::TAU).ceil() as usize).max(1);
        let dt = s.duration / n as f64;
        let at = |tm: f64| {
            let mut hm = h.clone();
            for (zk, (w, op)) in z.iter().zip(controls) {
                let f = (zk * C64::from_polar(1.0, w * tm)).re;
                hm += scale(op, c(f));
            }
            hm
        };
        let g = 3f64.sqrt() / 6.0;
        let (a1, a2) = (0.25 + g, 0.25 - g);
        for j in 0..n {
            let t0 = t + j as f64 * dt;
            let h1 = at(t0 + (0.5 - g) * dt);
            let h2 = at(t0 + (0.5 + g) * dt);
            let first = &scale(&h1, c(2.0 * a1)) + &scale(&h2, c(2.0 * a2));
            let second = &scale(&h1, c(2.0 * a2)) + &scale(&h2, c(2.0 * a1));
            u = &crate::linalg::expm_hermitian(&first, 0.5 * dt)? * &u;
            u = &crate::linalg::expm_hermitian(&second, 0.5 * dt)? * &u;
        }
        t += s.duration;
    }
    Ok(u)
}

#[cfg(test)]
fn unitarity_defect(u: &CMat) -> f64 {
    (&(crate::linalg::dagger(u) * u) - &eye(u.nrows())).norm_l2()
}

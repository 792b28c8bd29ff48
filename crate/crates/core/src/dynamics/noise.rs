//! Electron dephasing and imperfect initialization.
//!
//! States here live in the logical basis: each electron factor is ordered
//! `(+1, 0, -1)`, so level index `k` has `m_s = 1 - k`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{kron_all, zeros, CMat, C64};
use serde::{Deserialize, Serialize};

/// Per-NV decoherence and initialization parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Double-quantum coherence time per NV (s). `inf` disables dephasing.
    pub t2_dq_s: Vec<f64>,
    /// Free-induction decay time per NV (s), reported but not used in simulation.
    pub t2_star_s: Vec<f64>,
    /// Probability of starting in `m_s = 0`, per NV.
    pub polarization: Vec<f64>,
    /// Also dephase during pulses (slice by slice), not only in free evolution.
    #[serde(default = "yes")]
    pub during_pulses: bool,
}

fn yes() -> bool {
    true
}

impl NoiseModel {
    /// No dephasing and perfect initialization for `n` NVs.
    pub fn noiseless(n: usize) -> Self {
        Self {
            t2_dq_s: vec![f64::INFINITY; n],
            t2_star_s: vec![f64::INFINITY; n],
            polarization: vec![1.0; n],
            during_pulses: true,
        }
    }

    /// Values measured on the reference pair.
    pub fn reference_pair() -> Self {
        Self {
            t2_dq_s: vec![150e-6, 514e-6],
            t2_star_s: vec![27.8e-6, 22.6e-6],
            polarization: vec![0.97, 0.97],
            during_pulses: true,
        }
    }

    pub fn n_nv(&self) -> usize {
        self.t2_dq_s.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nv();
        if self.t2_star_s.len() != n || self.polarization.len() != n {
            return Err(invalid("noise", "per-NV lists must have equal length"));
        }
        if self.t2_dq_s.iter().chain(&self.t2_star_s).any(|t| !(*t > 0.0)) {
            return Err(invalid("noise", "coherence times must be positive"));
        }
        if self.polarization.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("polarization", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Which tensor factors of a register are NV electrons (spin 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub dims: Vec<usize>,
    pub electrons: Vec<usize>,
}

impl Layout {
    /// `e_A ⊗ n_A ⊗ e_B ⊗ n_B`.
    pub fn register() -> Self {
        Self {
            dims: vec![3, 2, 3, 2],
            electrons: vec![0, 2],
        }
    }

    /// `e ⊗ n`.
    pub fn single_nv() -> Self {
        Self {
            dims: vec![3, 2],
            electrons: vec![0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// `m_s` of every electron for each basis index.
    fn spin_projections(&self) -> Vec<Vec<i32>> {
        let d = self.dim();
        (0..d)
            .map(|mut idx| {
                let mut digits = vec![0; self.dims.len()];
                for f in (0..self.dims.len()).rev() {
                    digits[f] = idx % self.dims[f];
                    idx /= self.dims[f];
                }
                self.electrons.iter().map(|&f| 1 - digits[f] as i32).collect()
            })
            .collect()
    }

    fn check(&self, rho: &CMat, noise: &NoiseModel) -> Result<()> {
        if rho.nrows() != self.dim() || rho.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "state is {}x{}, layout needs {}",
                rho.nrows(),
                rho.ncols(),
                self.dim()
            )));
        }
        if noise.n_nv() != self.electrons.len() {
            return Err(invalid("noise", "needs one entry per electron"));
        }
        Ok(())
    }
}

/// Multiplies every electron coherence by `exp(-(Δm/2)² t / T2)` per NV.
pub fn apply_dephasing(rho: &CMat, layout: &Layout, noise: &NoiseModel, t: f64) -> Result<CMat> {
    layout.check(rho, noise)?;
    if !(t >= 0.0) {
        return Err(invalid("t", "must be non-negative"));
    }
    let m = layout.spin_projections();
    let rates: Vec<f64> = noise.t2_dq_s.iter().map(|t2| t / t2).collect();
    let mut out = rho.clone();
    for j in 0..rho.ncols() {
        for i in 0..rho.nrows() {
            let exponent: f64 = rates
                .iter()
                .zip(m[i].iter().zip(&m[j]))
                .map(|(r, (a, b))| {
                    let dm = f64::from(a - b) / 2.0;
                    if dm == 0.0 {
                        0.0
                    } else {
                        dm * dm * r
                    }
                })
                .sum();
            if exponent > 0.0 {
                out[(i, j)] *= (-exponent).exp();
            }
        }
    }
    Ok(out)
}

/// Product state with each electron in `m_s = 0` with probability `p`
/// (otherwise evenly in `±1`) and every other factor maximally mixed.
pub fn initial_state(layout: &Layout, noise: &NoiseModel) -> Result<CMat> {
    noise.validate()?;
    if noise.n_nv() != layout.electrons.len() {
        return Err(invalid("noise", "needs one entry per electron"));
    }
    let factors: Vec<CMat> = layout
        .dims
        .iter()
        .enumerate()
        .map(|(f, &d)| match layout.electrons.iter().position(|&e| e == f) {
            Some(k) => {
                let p = noise.polarization[k];
                let mut r = zeros(3, 3);
                r[(0, 0)] = C64::from((1.0 - p) / 2.0);
                r[(1, 1)] = C64::from(p);
                r[(2, 2)] = C64::from((1.0 - p) / 2.0);
                r
            }
            None => crate::linalg::scale(&crate::linalg::eye(d), C64::from(1.0 / d as f64)),
        })
        .collect();
    let refs: Vec<&CMat> = factors.iter().collect();
    Ok(kron_all(&refs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigvalsh, max_abs_diff, projector, random_state, trace};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn double_quantum_coherence_decays_at_t2dq() {
        let layout = Layout::single_nv();
        let mut noise = NoiseModel::noiseless(1);
        noise.t2_dq_s[0] = 150e-6;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // (|+1,↑> + |-1,↑>)/√2
        let mut psi = vec![C64::from(0.0); 6];
        psi[0] = C64::from(s);
        psi[4] = C64::from(s);
        let rho = projector(&psi);
        let out = apply_dephasing(&rho, &layout, &noise, 50.8e-6).unwrap();
        let factor = out[(0, 4)].re / rho[(0, 4)].re;
        assert!((factor - (-50.8f64 / 150.0).exp()).abs() < 1e-12);
        assert!((factor - 0.713).abs() < 1e-3);
        // Single-quantum coherences decay four times slower in the exponent.
        psi[4] = C64::from(0.0);
        psi[2] = C64::from(s);
        let rho = projector(&psi);
        let out = apply_dephasing(&rho, &layout, &noise, 50.8e-6).unwrap();
        assert!((out[(0, 2)].re / rho[(0, 2)].re - (-50.8f64 / 600.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn dephasing_limits() {
        let layout = Layout::register();
        let noise = NoiseModel::reference_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = projector(&random_state(36, &mut rng));
        let same = apply_dephasing(&rho, &layout, &noise, 0.0).unwrap();
        assert_eq!(max_abs_diff(&same, &rho), 0.0);
        let gone = apply_dephasing(&rho, &layout, &noise, 1.0).unwrap();
        assert!((trace(&gone) - trace(&rho)).norm() < 1e-14);
        for i in 0..36 {
            assert_eq!(gone[(i, i)], rho[(i, i)]);
        }
        // Nuclear coherences within one electron configuration survive.
        assert_eq!(gone[(0, 1)], rho[(0, 1)]);
        assert!(gone[(0, 12)].norm() < 1e-100);
        assert!(eigvalsh(&gone).unwrap()[0] > -1e-12);
    }

    #[test]
    fn initial_state_populations() {
        let layout = Layout::register();
        let rho = initial_state(&layout, &NoiseModel::reference_pair()).unwrap();
        assert!((trace(&rho).re - 1.0).abs() < 1e-15);
        let ea = crate::linalg::partial_trace(&rho, &layout.dims, &[1, 2, 3]).unwrap();
        assert!((ea[(1, 1)].re - 0.97).abs() < 1e-15);
        let pure = initial_state(&layout, &NoiseModel::noiseless(2)).unwrap();
        let e = crate::linalg::partial_trace(&pure, &layout.dims, &[1, 3]).unwrap();
        assert!((e[(4, 4)].re - 1.0).abs() < 1e-15);
    }
}

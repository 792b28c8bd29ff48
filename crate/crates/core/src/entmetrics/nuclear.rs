//! Estimating the nuclear spin states from electron tomographies taken
//! before storage, after one SWAP and after two.

use super::measures::check_state;
use crate::error::{Error, Result};
use crate::grape::{minimize, BfgsOptions, StopReason};
use crate::linalg::{c, kron_all, partial_trace, permute_factors, CMat, C64, I};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Electron two-qutrit tomographies with per-entry magnitude-only flags.
///
/// A flagged entry is compared by modulus only. `magnitude_only` is row-major
/// `9 × 9`; the default flags every entry.
#[derive(Clone, Debug)]
pub struct TomographyTriple {
    pub rho_a: CMat,
    pub rho_b: CMat,
    pub rho_c: CMat,
    pub magnitude_only: Vec<bool>,
}

impl TomographyTriple {
    pub fn new(rho_a: CMat, rho_b: CMat, rho_c: CMat) -> Result<Self> {
        let n = rho_a.nrows();
        Self::with_mask(rho_a, rho_b, rho_c, vec![true; n * n])
    }

    pub fn with_mask(rho_a: CMat, rho_b: CMat, rho_c: CMat, magnitude_only: Vec<bool>) -> Result<Self> {
        for r in [&rho_a, &rho_b, &rho_c] {
            if r.nrows() != 9 {
                return Err(Error::DimensionMismatch(format!(
                    "electron tomography must be 9x9, got {}x{}",
                    r.nrows(),
                    r.ncols()
                )));
            }
            check_state(r)?;
        }
        if magnitude_only.len() != 81 {
            return Err(Error::DimensionMismatch("mask must have 81 entries".into()));
        }
        Ok(Self {
            rho_a,
            rho_b,
            rho_c,
            magnitude_only,
        })
    }
}

/// Single-qubit state `(I + r·σ)/2`.
pub fn bloch_state(r: [f64; 3]) -> CMat {
    let mut m = faer::Mat::zeros(2, 2);
    m[(0, 0)] = c((1.0 + r[2]) / 2.0);
    m[(1, 1)] = c((1.0 - r[2]) / 2.0);
    m[(0, 1)] = C64::new(r[0], -r[1]) / 2.0;
    m[(1, 0)] = C64::new(r[0], r[1]) / 2.0;
    m
}

/// Bloch vector of a single-qubit state.
pub fn bloch_vector(rho: &CMat) -> [f64; 3] {
    let x = rho[(0, 1)] + rho[(1, 0)];
    let y = I * (rho[(0, 1)] - rho[(1, 0)]);
    [x.re, y.re, (rho[(0, 0)] - rho[(1, 1)]).re]
}

/// The nuclear Bell state `(|↑↑⟩ − i|↓↓⟩)/√2`.
pub fn nuclear_bell_state() -> Vec<C64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    vec![c(h), c(0.0), c(0.0), C64::new(0.0, -h)]
}

/// Register state `ρ_e ⊗ ρ_N1 ⊗ ρ_N2` in `e_A ⊗ n_A ⊗ e_B ⊗ n_B` order.
pub fn assemble_register(rho_e: &CMat, n1: &CMat, n2: &CMat) -> Result<CMat> {
    let grouped = kron_all(&[rho_e, n1, n2]);
    // Grouped factor order is (e_A, e_B, n_A, n_B).
    permute_factors(&grouped, &[3, 3, 2, 2], &[0, 2, 1, 3])
}

/// Electron state after conjugating `rho` by `s`, nuclei traced out.
fn electron_after(s: &CMat, rho: &CMat) -> Result<CMat> {
    let out = &(s * rho) * s.adjoint();
    partial_trace(&out, &[3, 2, 3, 2], &[1, 3])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateOptions {
    pub starts: usize,
    pub max_iterations: usize,
    /// Central finite-difference step for the gradient.
    pub fd_step: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            max_iterations: 200,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NuclearEstimate {
    pub n1: CMat,
    pub n2: CMat,
    pub bloch: [[f64; 3]; 2],
    pub residual: f64,
    /// Nuclear two-qubit state after one SWAP, `tr_e(S σ_A S†)`, in
    /// `n_A ⊗ n_B` order.
    pub stored_state: CMat,
    /// False if the best start stalled or hit the iteration limit.
    pub converged: bool,
}

/// Residual of the fit for given nuclear Bloch vectors.
pub fn estimation_residual(tomo: &TomographyTriple, s: &CMat, r1: [f64; 3], r2: [f64; 3]) -> Result<f64> {
    let sigma = assemble_register(&tomo.rho_a, &bloch_state(r1), &bloch_state(r2))?;
    let once = electron_after(s, &sigma)?;
    let s2 = s * s;
    let twice = electron_after(&s2, &sigma)?;
    Ok(mismatch(&once, &tomo.rho_b, &tomo.magnitude_only) + mismatch(&twice, &tomo.rho_c, &tomo.magnitude_only))
}

fn mismatch(model: &CMat, data: &CMat, mask: &[bool]) -> f64 {
    let n = model.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (m, d) = (model[(i, j)], data[(i, j)]);
            sum += if mask[i * n + j] {
                (m.norm() - d.norm()).powi(2)
            } else {
                (m - d).norm_sqr()
            };
        }
    }
    sum
}

fn project_balls(v: &mut [f64]) {
    for r in v.chunks_mut(3) {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1.0 {
            r.iter_mut().for_each(|x| *x /= n);
        }
    }
}

fn split(v: &[f64]) -> ([f64; 3], [f64; 3]) {
    ([v[0], v[1], v[2]], [v[3], v[4], v[5]])
}

/// Random point in the unit ball.
pub(crate) fn random_bloch<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let r = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        if r.iter().map(|x: &f64| x * x).sum::<f64>() <= 1.0 {
            return r;
        }
    }
}

/// Fits the two nuclear states so that the SWAP `s` (36 × 36, register
/// order) maps `ρ_A ⊗ ρ_N1 ⊗ ρ_N2` onto the later tomographies.
pub fn estimate_nuclear_state(
    tomo: &TomographyTriple,
    s: &CMat,
    opts: &EstimateOptions,
    seed: u64,
) -> Result<NuclearEstimate> {
    if s.nrows() != 36 || s.ncols() != 36 {
        return Err(Error::DimensionMismatch("SWAP must be 36x36".into()));
    }
    let h = opts.fd_step;
    let value = |v: &[f64]| {
        let (a, b) = split(v);
        estimation_residual(tomo, s, a, b)
    };
    let objective = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
        let f = value(v)?;
        let mut g = vec![0.0; 6];
        let mut w = v.to_vec();
        for k in 0..6 {
            w[k] = v[k] + h;
            let up = value(&w)?;
            w[k] = v[k] - h;
            let down = value(&w)?;
            w[k] = v[k];
            g[k] = (up - down) / (2.0 * h);
        }
        Ok((f, g))
    };
    let bfgs = BfgsOptions {
        max_iterations: opts.max_iterations,
        gradient_floor: 1e-12,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>, StopReason)> = None;
    for k in 0..opts.starts.max(1) {
        let x0: Vec<f64> = if k == 0 {
            vec![0.0; 6]
        } else {
            random_bloch(&mut rng).into_iter().chain(random_bloch(&mut rng)).collect()
        };
        let r = minimize(objective, &x0, project_balls, &bfgs)?;
        if best.as_ref().is_none_or(|b| r.value < b.0) {
            best = Some((r.value, r.x, r.stop));
        }
    }
    let (residual, x, stop) = best.expect("at least one start");
    let (r1, r2) = split(&x);
    let sigma = assemble_register(&tomo.rho_a, &bloch_state(r1), &bloch_state(r2))?;
    let stored_state = partial_trace(&(&(s * &sigma) * s.adjoint()), &[3, 2, 3, 2], &[0, 2])?;
    Ok(NuclearEstimate {
        stored_state,
        n1: bloch_state(r1),
        n2: bloch_state(r2),
        bloch: [r1, r2],
        residual,
        converged: matches!(stop, StopReason::Goal | StopReason::GradientFloor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{partial_swap, phi_dq};
    use crate::linalg::{kron, projector, random_state, scale};

    fn register_swap() -> CMat {
        kron(&partial_swap(), &partial_swap())
    }

    /// Entangled electron pair mixed with a random state.
    fn electron_state(seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = projector(&random_state(9, &mut rng));
        &scale(&projector(&phi_dq()), c(0.8)) + &scale(&noise, c(0.2))
    }

    fn synthetic(r1: [f64; 3], r2: [f64; 3], rho_a: CMat) -> TomographyTriple {
        let s = register_swap();
        let sigma = assemble_register(&rho_a, &bloch_state(r1), &bloch_state(r2)).unwrap();
        let b = electron_after(&s, &sigma).unwrap();
        let cc = electron_after(&(&s * &s), &sigma).unwrap();
        TomographyTriple::new(rho_a, b, cc).unwrap()
    }

    #[test]
    fn bloch_round_trip() {
        let r = [0.3, -0.4, 0.5];
        let back = bloch_vector(&bloch_state(r));
        for k in 0..3 {
            assert!((back[k] - r[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn register_assembly_orders_factors() {
        let e = electron_state(1);
        let n1 = bloch_state([0.0, 0.0, 1.0]);
        let n2 = bloch_state([0.0, 0.0, -1.0]);
        let full = assemble_register(&e, &n1, &n2).unwrap();
        // n_A = ↑ (index 0), n_B = ↓ (index 1): entry (e_A, e_B) = (0, 0).
        assert!((full[(1, 1)] - e[(0, 0)]).norm() < 1e-15);
        let back = partial_trace(&full, &[3, 2, 3, 2], &[1, 3]).unwrap();
        assert!(crate::linalg::max_abs_diff(&back, &e) < 1e-15);
    }

    #[test]
    fn exact_data_has_zero_residual() {
        let (r1, r2) = ([0.2, 0.1, -0.6], [-0.3, 0.5, 0.4]);
        let tomo = synthetic(r1, r2, electron_state(2));
        let s = register_swap();
        assert!(estimation_residual(&tomo, &s, r1, r2).unwrap() < 1e-28);
        assert!(estimation_residual(&tomo, &s, [0.0; 3], [0.0; 3]).unwrap() > 1e-4);
    }

    #[test]
    fn closed_loop_recovery() {
        let (r1, r2) = ([0.2, 0.1, -0.6], [-0.3, 0.5, 0.4]);
        let tomo = synthetic(r1, r2, electron_state(2));
        let est = estimate_nuclear_state(&tomo, &register_swap(), &EstimateOptions::default(), 5).unwrap();
        for (got, want) in est.bloch.iter().zip([r1, r2]) {
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-3, "{got:?} vs {want:?}");
            }
        }
    }
}

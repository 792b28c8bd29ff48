//! Fidelity and relative entropy of density matrices.

use crate::error::{Error, Result};
use crate::linalg::{eigh, funm_hermitian, hermitian_deviation, trace, CMat, C64};

/// Tolerance for negative eigenvalues and trace deviations of a state.
pub const STATE_TOL: f64 = 1e-9;

/// Checks that `rho` is a density matrix within [`STATE_TOL`].
pub fn check_state(rho: &CMat) -> Result<()> {
    if rho.nrows() != rho.ncols() {
        return Err(Error::DimensionMismatch("density matrix must be square".into()));
    }
    let dev = hermitian_deviation(rho);
    if dev > STATE_TOL {
        return Err(Error::NotHermitian(dev));
    }
    let tr = trace(rho).re;
    if (tr - 1.0).abs() > STATE_TOL {
        return Err(crate::error::invalid("density matrix", "trace differs from one"));
    }
    let lo = crate::linalg::eigvalsh(rho)?[0];
    if lo < -STATE_TOL {
        return Err(Error::NotPositive(lo));
    }
    Ok(())
}

fn same_shape(a: &CMat, b: &CMat) -> Result<()> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "states of size {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(())
}

/// Uhlmann fidelity `‖√ρ √σ‖_tr²`.
pub fn state_fidelity(rho: &CMat, sigma: &CMat) -> Result<f64> {
    same_shape(rho, sigma)?;
    check_state(rho)?;
    check_state(sigma)?;
    let root = |a: &CMat| funm_hermitian(a, |x| C64::from(x.max(0.0).sqrt()));
    let f = crate::linalg::trace_norm(&(root(rho)? * root(sigma)?))?;
    Ok((f * f).min(1.0))
}

/// Eigenvalues of `sigma` at or below this count as its kernel.
pub const KERNEL_TOL: f64 = 1e-14;

/// `S(ρ‖σ) = tr ρ (log ρ − log σ)` in nats; infinite when `ρ` has weight on
/// the kernel of `σ`.
pub fn relative_entropy(rho: &CMat, sigma: &CMat) -> Result<f64> {
    same_shape(rho, sigma)?;
    let er = eigh(&crate::linalg::hermitian_part(rho))?;
    let es = eigh(&crate::linalg::hermitian_part(sigma))?;
    let neg_entropy: f64 = er
        .values
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum();
    let rt = &(es.vectors.adjoint() * rho) * &es.vectors;
    let mut cross = 0.0;
    for (j, &q) in es.values.iter().enumerate() {
        let w = rt[(j, j)].re;
        if q <= KERNEL_TOL {
            if w > KERNEL_TOL.sqrt() {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        cross += w * q.ln();
    }
    Ok((neg_entropy - cross).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, eye, projector, random_state, scale};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_state(4, &mut rng);
        let b = random_state(4, &mut rng);
        let pa = projector(&a);
        let pb = projector(&b);
        assert!((state_fidelity(&pa, &pa).unwrap() - 1.0).abs() < 1e-7);
        let overlap: C64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        assert!((state_fidelity(&pa, &pb).unwrap() - overlap.norm_sqr()).abs() < 1e-7);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phi = projector(&[c(s), c(0.0), c(0.0), C64::new(0.0, s)]);
        let mixed = scale(&eye(4), c(0.25));
        assert!((state_fidelity(&phi, &mixed).unwrap() - 0.25).abs() < 1e-9);
        assert!((state_fidelity(&mixed, &phi).unwrap() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn relative_entropy_examples() {
        let zero = projector(&[c(1.0), c(0.0)]);
        let one = projector(&[c(0.0), c(1.0)]);
        let half = scale(&eye(2), c(0.5));
        assert!(relative_entropy(&half, &half).unwrap().abs() < 1e-14);
        assert!((relative_entropy(&zero, &half).unwrap() - 2f64.ln()).abs() < 1e-14);
        assert_eq!(relative_entropy(&zero, &one).unwrap(), f64::INFINITY);
        // A kernel of σ outside the support of ρ is harmless.
        assert!(relative_entropy(&zero, &zero).unwrap().abs() < 1e-14);
    }
}

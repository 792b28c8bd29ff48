//! Gate-error functionals and their linearizations.

use crate::error::{invalid, Error, Result};
use crate::linalg::{embed, partial_trace, polar_conjugate, trace, trace_norm, unitary_distance, CMat, C64};

/// Whether the whole propagator or only one subsystem must match.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetKind {
    Full,
    /// `G ⊗ W` for any `W` on the factors not listed in `targets`.
    Partial { dims: Vec<usize>, targets: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateTarget {
    pub matrix: CMat,
    pub kind: TargetKind,
    /// Basis indices of the propagator the target is scored on, with the
    /// size of the full space. `None` scores the whole propagator.
    pub levels: Option<(Vec<usize>, usize)>,
}

fn check_unitary(g: &CMat) -> Result<()> {
    if g.nrows() != g.ncols() {
        return Err(Error::DimensionMismatch("target gate must be square".into()));
    }
    let d = unitary_distance(&(g.adjoint() * g), &crate::linalg::eye(g.nrows()));
    if d > 1e-10 {
        return Err(invalid("target", "gate is not unitary"));
    }
    Ok(())
}

impl GateTarget {
    pub fn full(g: CMat) -> Result<Self> {
        check_unitary(&g)?;
        Ok(Self {
            matrix: g,
            kind: TargetKind::Full,
            levels: None,
        })
    }

    /// `g` acts on the factors `targets` (ascending) of a system with `dims`.
    pub fn partial(g: CMat, dims: Vec<usize>, mut targets: Vec<usize>) -> Result<Self> {
        check_unitary(&g)?;
        targets.sort_unstable();
        targets.dedup();
        if targets.iter().any(|&t| t >= dims.len()) {
            return Err(invalid("targets", "factor index out of range"));
        }
        let td: usize = targets.iter().map(|&t| dims[t]).product();
        if td != g.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "gate of size {} does not match target factors of size {td}",
                g.nrows()
            )));
        }
        Ok(Self {
            matrix: g,
            kind: TargetKind::Partial { dims, targets },
            levels: None,
        })
    }

    /// Scores the target only on the levels `kept` of factor `factor` of a
    /// register with `full_dims`; the target's own dims must be `full_dims`
    /// with that factor shrunk to `kept.len()`.
    pub fn restricted(mut self, full_dims: &[usize], factor: usize, kept: &[usize]) -> Result<Self> {
        if factor >= full_dims.len() || kept.iter().any(|&k| k >= full_dims[factor]) {
            return Err(invalid("levels", "factor or level out of range"));
        }
        let mut small = full_dims.to_vec();
        small[factor] = kept.len();
        let expect: usize = small.iter().product();
        let ok = match &self.kind {
            TargetKind::Full => self.matrix.nrows() == expect,
            TargetKind::Partial { dims, .. } => *dims == small,
        };
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "target does not match the restricted dims {small:?}"
            )));
        }
        let full: usize = full_dims.iter().product();
        let indices = (0..full)
            .filter(|&idx| {
                let inner: usize = full_dims[factor + 1..].iter().product();
                kept.contains(&((idx / inner) % full_dims[factor]))
            })
            .collect();
        self.levels = Some((indices, full));
        Ok(self)
    }

    /// Dimension of the propagator.
    pub fn dim(&self) -> usize {
        if let Some((_, full)) = &self.levels {
            return *full;
        }
        self.scored_dim()
    }

    fn scored_dim(&self) -> usize {
        match &self.kind {
            TargetKind::Full => self.matrix.nrows(),
            TargetKind::Partial { dims, .. } => dims.iter().product(),
        }
    }

    fn scored(&self, u: &CMat) -> Result<CMat> {
        let d = self.dim();
        if u.nrows() != d || u.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "propagator is {}x{}, target needs {d}",
                u.nrows(),
                u.ncols()
            )));
        }
        Ok(match &self.levels {
            None => u.clone(),
            Some((idx, _)) => faer::Mat::from_fn(idx.len(), idx.len(), |i, j| u[(idx[i], idx[j])]),
        })
    }

    pub fn error(&self, u: &CMat) -> Result<f64> {
        let u = self.scored(u)?;
        match &self.kind {
            TargetKind::Full => gate_error(&u, &self.matrix),
            TargetKind::Partial { dims, targets } => partial_gate_error(&u, &self.matrix, dims, targets),
        }
    }

    /// Error `E` and a matrix `Λ` with `dE = -Re tr(Λ dU)` at `U`.
    pub fn error_and_weight(&self, u: &CMat) -> Result<(f64, CMat)> {
        let us = self.scored(u)?;
        let d = self.scored_dim() as f64;
        let (e, lambda) = match &self.kind {
            TargetKind::Full => {
                let gd = self.matrix.adjoint().to_owned();
                let g = trace(&(&gd * &us));
                let phase = if g.norm() > 0.0 { g.conj() / g.norm() } else { C64::from(1.0) };
                (1.0 - g.norm() / d, crate::linalg::scale(&gd, phase / d))
            }
            TargetKind::Partial { dims, targets } => {
                let ge = embed(&self.matrix, dims, targets)?;
                let m = partial_trace(&(ge.adjoint() * &us), dims, targets)?;
                let q = polar_conjugate(&m)?;
                let spectators: Vec<usize> = (0..dims.len()).filter(|i| !targets.contains(i)).collect();
                let norm = if spectators.is_empty() {
                    m[(0, 0)].norm()
                } else {
                    trace_norm(&m)?
                };
                let lambda = if spectators.is_empty() {
                    crate::linalg::scale(&ge.adjoint().to_owned(), q[(0, 0)] / d)
                } else {
                    crate::linalg::scale(&(&embed(&q, dims, &spectators)? * ge.adjoint()), C64::from(1.0 / d))
                };
                (1.0 - norm / d, lambda)
            }
        };
        match &self.levels {
            None => Ok((e, lambda)),
            Some((idx, full)) => {
                // tr(Λ P† dU P) = tr(P Λ P† dU).
                let mut out = crate::linalg::zeros(*full, *full);
                for (a, &i) in idx.iter().enumerate() {
                    for (b, &j) in idx.iter().enumerate() {
                        out[(i, j)] = lambda[(a, b)];
                    }
                }
                Ok((e, out))
            }
        }
    }
}

/// `1 - |tr(G† U)| / D`.
pub fn gate_error(u: &CMat, g: &CMat) -> Result<f64> {
    if u.nrows() != g.nrows() || u.ncols() != g.ncols() {
        return Err(Error::DimensionMismatch("propagator and gate differ in size".into()));
    }
    let d = g.nrows() as f64;
    Ok(1.0 - trace(&(g.adjoint() * u)).norm() / d)
}

/// `1 - ‖tr_T((G ⊗ 1)† U)‖_tr / D`, tracing out the target factors `T`, so
/// that every `G ⊗ W` scores zero.
pub fn partial_gate_error(u: &CMat, g: &CMat, dims: &[usize], targets: &[usize]) -> Result<f64> {
    let ge = embed(g, dims, targets)?;
    if u.nrows() != ge.nrows() {
        return Err(Error::DimensionMismatch("propagator does not match the factor dims".into()));
    }
    let m = partial_trace(&(ge.adjoint() * u), dims, targets)?;
    let d = ge.nrows() as f64;
    Ok(1.0 - trace_norm(&m)? / d)
}

/// NOT on the `(+1, 0)` qubit of a spin-1 electron, leaving `-1` alone.
pub fn qutrit_not() -> CMat {
    crate::linalg::from_real_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]])
}

/// NOT on the `(+1, 0)` qubit of NV A's electron in the two-NV register,
/// scored on that qubit only; the `-1` level of NV A is left unconstrained.
pub fn register_not_target() -> Result<GateTarget> {
    let x = crate::linalg::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
    GateTarget::partial(x, vec![2, 2, 3, 2], vec![0])?.restricted(&[3, 2, 3, 2], 0, &[0, 1])
}

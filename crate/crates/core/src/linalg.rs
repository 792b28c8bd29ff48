//! Dense complex linear algebra helpers on top of `faer`.

use crate::error::{Error, Result};
use faer::{Mat, Side};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMat = Mat<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn eye(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { c(1.0) } else { c(0.0) })
}

pub fn zeros(n: usize, m: usize) -> CMat {
    Mat::zeros(n, m)
}

pub fn from_rows(rows: &[&[C64]]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn from_real_rows(rows: &[&[f64]]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(n, m, |i, j| c(rows[i][j]))
}

pub fn diag(values: &[C64]) -> CMat {
    let n = values.len();
    Mat::from_fn(n, n, |i, j| if i == j { values[i] } else { c(0.0) })
}

pub fn scale(a: &CMat, s: C64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn dagger(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

/// `a ⊗ b` with `a` as the slow (most significant) index.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = (a.nrows(), a.ncols());
    let (rb, cb) = (b.nrows(), b.ncols());
    let mut out = Mat::zeros(ra * rb, ca * cb);
    for ja in 0..ca {
        let acol = a.col_as_slice(ja);
        for jb in 0..cb {
            let bcol = b.col_as_slice(jb);
            let ocol = out.col_as_slice_mut(ja * cb + jb);
            for (ia, &x) in acol.iter().enumerate() {
                let dst = &mut ocol[ia * rb..(ia + 1) * rb];
                for (d, &y) in dst.iter_mut().zip(bcol) {
                    *d = x * y;
                }
            }
        }
    }
    out
}

pub fn kron_all(factors: &[&CMat]) -> CMat {
    let mut out = eye(1);
    for f in factors {
        out = kron(&out, f);
    }
    out
}

pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// `tr(a b)` without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> C64 {
    let mut s = c(0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

pub fn frobenius(a: &CMat) -> f64 {
    a.norm_l2()
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn hermitian_deviation(a: &CMat) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..=j.min(a.nrows() - 1) {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

pub fn hermitian_part(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        (a[(i, j)] + a[(j, i)].conj()) * 0.5
    })
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn eigh(a: &CMat) -> Result<Eigh> {
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Decomposition("hermitian eigendecomposition"))?;
    let s = e.S().column_vector();
    let values = (0..a.nrows()).map(|i| s[i].re).collect();
    Ok(Eigh {
        values,
        vectors: e.U().to_owned(),
    })
}

pub fn eigvalsh(a: &CMat) -> Result<Vec<f64>> {
    let v = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::Decomposition("hermitian eigenvalues"))?;
    Ok(v)
}

impl Eigh {
    /// `V f(Λ) V†`.
    pub fn apply(&self, f: impl Fn(f64) -> C64) -> CMat {
        let v = &self.vectors;
        let n = v.nrows();
        let fv: Vec<C64> = self.values.iter().map(|&x| f(x)).collect();
        let scaled = Mat::from_fn(n, n, |i, j| v[(i, j)] * fv[j]);
        &scaled * v.adjoint()
    }
}

/// `exp(-i h t)` for Hermitian `h`.
pub fn expm_hermitian(h: &CMat, t: f64) -> Result<CMat> {
    Ok(eigh(h)?.apply(|x| C64::from_polar(1.0, -x * t)))
}

/// Matrix function of a Hermitian matrix.
pub fn funm_hermitian(h: &CMat, f: impl Fn(f64) -> C64) -> Result<CMat> {
    Ok(eigh(h)?.apply(f))
}

pub fn singular_values(a: &CMat) -> Result<Vec<f64>> {
    a.singular_values()
        .map_err(|_| Error::Decomposition("singular values"))
}

pub fn trace_norm(a: &CMat) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

/// Unitary factor `V W†` of `a = W Σ V†`, so that `tr(q a) = ‖a‖₁`.
pub fn polar_conjugate(a: &CMat) -> Result<CMat> {
    let svd = a.svd().map_err(|_| Error::Decomposition("svd"))?;
    Ok(svd.V() * svd.U().adjoint())
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Splits every full index into (index over `sel`, index over the rest).
fn split_indices(dims: &[usize], sel: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n: usize = dims.iter().product();
    let st = strides(dims);
    let rest: Vec<usize> = (0..dims.len()).filter(|k| !sel.contains(k)).collect();
    let mut a = vec![0; n];
    let mut b = vec![0; n];
    for idx in 0..n {
        let digit = |k: usize| (idx / st[k]) % dims[k];
        a[idx] = sel.iter().fold(0, |acc, &k| acc * dims[k] + digit(k));
        b[idx] = rest.iter().fold(0, |acc, &k| acc * dims[k] + digit(k));
    }
    (a, b)
}

fn check_factors(dims: &[usize], sel: &[usize], n: usize) -> Result<()> {
    let total: usize = dims.iter().product();
    if total != n {
        return Err(Error::DimensionMismatch(format!(
            "matrix dimension {n} does not match factor dimensions {dims:?}"
        )));
    }
    for (i, &k) in sel.iter().enumerate() {
        if k >= dims.len() || sel[..i].contains(&k) {
            return Err(Error::DimensionMismatch(format!(
                "invalid factor selection {sel:?} for {dims:?}"
            )));
        }
    }
    Ok(())
}

/// Traces out the factors listed in `traced`; remaining factors keep their order.
pub fn partial_trace(a: &CMat, dims: &[usize], traced: &[usize]) -> Result<CMat> {
    check_factors(dims, traced, a.nrows())?;
    let (t, k) = split_indices(dims, traced);
    let kept: usize = (0..dims.len())
        .filter(|i| !traced.contains(i))
        .map(|i| dims[i])
        .product();
    let mut out = zeros(kept, kept);
    let n = a.nrows();
    for j in 0..n {
        for i in 0..n {
            if t[i] == t[j] {
                out[(k[i], k[j])] += a[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Lifts `op`, acting on `targets` (in the listed order), to the full space.
pub fn embed(op: &CMat, dims: &[usize], targets: &[usize]) -> Result<CMat> {
    let n: usize = dims.iter().product();
    check_factors(dims, targets, n)?;
    let td: usize = targets.iter().map(|&k| dims[k]).product();
    if op.nrows() != td || op.ncols() != td {
        return Err(Error::DimensionMismatch(format!(
            "operator of size {} cannot act on factors {targets:?} of {dims:?}",
            op.nrows()
        )));
    }
    let (t, k) = split_indices(dims, targets);
    Ok(Mat::from_fn(n, n, |i, j| {
        if k[i] == k[j] {
            op[(t[i], t[j])]
        } else {
            c(0.0)
        }
    }))
}

/// Reorders tensor factors: factor `perm[i]` of the input becomes factor `i`.
pub fn permute_factors(a: &CMat, dims: &[usize], perm: &[usize]) -> Result<CMat> {
    if perm.len() != dims.len() {
        return Err(Error::DimensionMismatch(format!(
            "permutation {perm:?} for {dims:?}"
        )));
    }
    check_factors(dims, perm, a.nrows())?;
    let (p, _) = split_indices(dims, perm);
    let n = a.nrows();
    let mut out = zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            out[(p[i], p[j])] = a[(i, j)];
        }
    }
    Ok(out)
}

pub fn ket(amplitudes: &[C64]) -> CMat {
    Mat::from_fn(amplitudes.len(), 1, |i, _| amplitudes[i])
}

pub fn projector(psi: &[C64]) -> CMat {
    let n = psi.len();
    Mat::from_fn(n, n, |i, j| psi[i] * psi[j].conj())
}

pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= norm);
    v
}

/// Haar-distributed unitary (Gram–Schmidt on a complex Ginibre matrix).
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        for u in &cols {
            let p: C64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-10 {
            v.iter_mut().for_each(|z| *z /= norm);
            cols.push(v);
        }
    }
    Mat::from_fn(n, n, |i, j| cols[j][i])
}

/// `1 - |tr(a† b)| / n`, a phase-insensitive distance between unitaries.
pub fn unitary_distance(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows() as f64;
    1.0 - (a.adjoint() * b).as_ref().diagonal().column_vector().sum().norm() / n
}

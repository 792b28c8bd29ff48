//! Upper bounds on the relative entropy of entanglement by randomized descent
//! over separable states.

use super::measures::{relative_entropy, KERNEL_TOL};
use crate::dynamics::golden_section;
use crate::error::{invalid, Error, Result};
use crate::linalg::{eigh, kron, projector, random_state, scale, zeros, CMat, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

/// A separable state together with its decomposition into product states.
#[derive(Clone, Debug)]
pub struct SeparableCandidate {
    pub state: CMat,
    /// `(weight, ρ_A, ρ_B)` with weights summing to one.
    pub components: Vec<(f64, CMat, CMat)>,
}

impl SeparableCandidate {
    fn from_components(components: Vec<(f64, CMat, CMat)>) -> Self {
        let state = reconstruct(&components);
        Self { state, components }
    }

    /// `Σ w ρ_A ⊗ ρ_B`.
    pub fn reconstruct(&self) -> CMat {
        reconstruct(&self.components)
    }

    fn mix(&mut self, s: f64, other: &SeparableCandidate) {
        for c in &mut self.components {
            c.0 *= 1.0 - s;
        }
        self.components
            .extend(other.components.iter().map(|(w, a, b)| (w * s, a.clone(), b.clone())));
        self.state = &scale(&self.state, C64::from(1.0 - s)) + &scale(&other.state, C64::from(s));
    }
}

fn reconstruct(components: &[(f64, CMat, CMat)]) -> CMat {
    let (_, a, b) = &components[0];
    let n = a.nrows() * b.nrows();
    let mut out = zeros(n, n);
    for (w, a, b) in components {
        out += scale(&kron(a, b), C64::from(*w));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundOptions {
    pub iterations: usize,
    /// Product states per random separable proposal.
    pub mixture_size: usize,
    /// Fraction of proposals built from the local descent direction; the
    /// rest are random separable states.
    pub steered_fraction: f64,
    pub line_tol: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            iterations: 2000,
            mixture_size: 4,
            steered_fraction: 0.5,
            line_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EntanglementBound {
    /// `S(ρ‖σ)` of the best separable `σ` found, in nats.
    pub value: f64,
    pub sigma: SeparableCandidate,
    /// Best value after each iteration, starting with `S(ρ‖σ_0)`.
    pub trace: Vec<f64>,
}

/// Random pure product states mixed with flat Dirichlet weights.
pub fn random_separable<R: Rng + ?Sized>(da: usize, db: usize, m: usize, rng: &mut R) -> SeparableCandidate {
    let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    let components = raw
        .iter()
        .map(|w| {
            (
                w / total,
                projector(&random_state(da, rng)),
                projector(&random_state(db, rng)),
            )
        })
        .collect();
    SeparableCandidate::from_components(components)
}

/// Fréchet derivative of the matrix logarithm at `σ` applied to `ρ`.
fn log_derivative(sigma: &CMat, rho: &CMat) -> Result<CMat> {
    let e = eigh(sigma)?;
    let v = &e.vectors;
    let rt = &(v.adjoint() * rho) * v;
    let q: Vec<f64> = e.values.iter().map(|x| x.max(KERNEL_TOL)).collect();
    let n = q.len();
    let g = faer::Mat::from_fn(n, n, |i, j| {
        let (a, b) = (q[i], q[j]);
        let d = if (a - b).abs() <= 1e-12 * a.max(b) {
            1.0 / a
        } else {
            (a.ln() - b.ln()) / (a - b)
        };
        rt[(i, j)] * d
    });
    Ok(&(v * &g) * v.adjoint())
}

/// Top eigenvector of a Hermitian matrix.
fn top_vector(a: &CMat) -> Result<Vec<C64>> {
    let e = eigh(&crate::linalg::hermitian_part(a))?;
    let k = e.values.len() - 1;
    Ok((0..a.nrows()).map(|i| e.vectors[(i, k)]).collect())
}

/// Product state `|a⟩|b⟩` approximately maximizing `⟨ab|L|ab⟩`, by
/// alternating single-party eigenproblems from a random start.
fn steered_product<R: Rng + ?Sized>(l: &CMat, da: usize, db: usize, rng: &mut R) -> Result<SeparableCandidate> {
    let mut b = random_state(db, rng);
    let mut a = vec![C64::from(0.0); da];
    for _ in 0..8 {
        let la = faer::Mat::from_fn(da, da, |i, j| {
            let mut s = C64::from(0.0);
            for (k, bk) in b.iter().enumerate() {
                for (m, bm) in b.iter().enumerate() {
                    s += bk.conj() * l[(i * db + k, j * db + m)] * bm;
                }
            }
            s
        });
        a = top_vector(&la)?;
        let lb = faer::Mat::from_fn(db, db, |k, m| {
            let mut s = C64::from(0.0);
            for (i, ai) in a.iter().enumerate() {
                for (j, aj) in a.iter().enumerate() {
                    s += ai.conj() * l[(i * db + k, j * db + m)] * aj;
                }
            }
            s
        });
        b = top_vector(&lb)?;
    }
    Ok(SeparableCandidate::from_components(vec![(1.0, projector(&a), projector(&b))]))
}

/// Upper bound on the relative entropy of entanglement of `rho` across the
/// split `da × db`, starting from the product-basis dephased state.
pub fn entanglement_upper_bound(
    rho: &CMat,
    da: usize,
    db: usize,
    opts: &BoundOptions,
    seed: u64,
) -> Result<EntanglementBound> {
    if da * db != rho.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{da}x{db} split of a {}-dimensional state",
            rho.nrows()
        )));
    }
    if !(0.0..=1.0).contains(&opts.steered_fraction) || opts.mixture_size == 0 {
        return Err(invalid("bound options", "bad mixture settings"));
    }
    super::measures::check_state(rho)?;
    let basis = |d: usize, i: usize| {
        let mut v = vec![C64::from(0.0); d];
        v[i] = C64::from(1.0);
        projector(&v)
    };
    let mut start = Vec::new();
    for i in 0..da {
        for j in 0..db {
            let w = rho[(i * db + j, i * db + j)].re.max(0.0);
            if w > 0.0 {
                start.push((w, basis(da, i), basis(db, j)));
            }
        }
    }
    let total: f64 = start.iter().map(|c| c.0).sum();
    start.iter_mut().for_each(|c| c.0 /= total);
    let mut sigma = SeparableCandidate::from_components(start);
    let mut value = relative_entropy(rho, &sigma.state)?;
    if !value.is_finite() {
        // Regularize with a small maximally mixed (hence separable) part.
        let eps = 1e-10;
        let flat = (0..da)
            .flat_map(|i| (0..db).map(move |j| (i, j)))
            .map(|(i, j)| (1.0 / (da * db) as f64, basis(da, i), basis(db, j)))
            .collect();
        sigma.mix(eps, &SeparableCandidate::from_components(flat));
        value = relative_entropy(rho, &sigma.state)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = vec![value];
    for _ in 0..opts.iterations {
        let zeta = if rng.random::<f64>() < opts.steered_fraction {
            let l = log_derivative(&sigma.state, rho)?;
            steered_product(&l, da, db, &mut rng)?
        } else {
            random_separable(da, db, opts.mixture_size, &mut rng)
        };
        let objective = |s: f64| {
            let mixed = &scale(&sigma.state, C64::from(1.0 - s)) + &scale(&zeta.state, C64::from(s));
            relative_entropy(rho, &mixed).unwrap_or(f64::INFINITY)
        };
        let s = golden_section(&objective, 0.0, 1.0, opts.line_tol);
        let candidate = objective(s);
        if candidate < value {
            sigma.mix(s, &zeta);
            value = candidate;
        }
        trace.push(value);
    }
    Ok(EntanglementBound { value, sigma, trace })
}

//! Projected quasi-Newton minimization with a monotone backtracking search.

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop once the objective drops below this value.
    pub goal: f64,
    /// Stop once the projected gradient norm drops below this value.
    pub gradient_floor: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            goal: 0.0,
            gradient_floor: 1e-9,
            armijo: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Goal,
    GradientFloor,
    MaxIterations,
    /// The line search found no decrease.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the feasible set defined by the projection `project`.
///
/// `f` returns the value and gradient. Steps follow `x(α) = P(x + α d)` and
/// are accepted only on sufficient decrease, so the trace never increases.
pub fn minimize<F, P>(mut f: F, x0: &[f64], project: P, opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: Fn(&mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let mut trace = vec![fx];
    let identity = |h: &mut Vec<f64>| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
    };
    let mut h = vec![0.0; n * n];
    identity(&mut h);
    let mut first = true;
    let mut iterations = 0;
    let projected_gradient = |x: &[f64], g: &[f64]| {
        let mut p: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        project(&mut p);
        p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let stop = loop {
        if fx <= opts.goal {
            break StopReason::Goal;
        }
        if projected_gradient(&x, &g) <= opts.gradient_floor {
            break StopReason::GradientFloor;
        }
        if iterations >= opts.max_iterations {
            break StopReason::MaxIterations;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        if dot(&d, &g) >= 0.0 {
            identity(&mut h);
            d = g.iter().map(|v| -v).collect();
        }
        // Scale the very first step to a modest length.
        let mut alpha = if first {
            (1.0 / dot(&d, &d).sqrt()).min(1.0) * 0.1
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            project(&mut xn);
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &s);
            if decrease < 0.0 {
                let (fn_, gn) = f(&xn)?;
                if fn_.is_finite() && fn_ <= fx + opts.armijo * decrease {
                    accepted = Some((xn, fn_, gn, s));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            if first {
                break StopReason::Stalled;
            }
            // Retry once from steepest descent before giving up.
            identity(&mut h);
            first = true;
            continue;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                // Shanno scaling of the initial inverse Hessian.
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        x = xn;
        fx = fn_;
        g = gn;
        first = false;
        iterations += 1;
        trace.push(fx);
    };
    Ok(BfgsResult {
        x,
        value: fx,
        iterations,
        trace,
        stop,
    })
}

/// Clamps consecutive `(x, y)` pairs to the unit disk.
pub fn clamp_pairs(v: &mut [f64]) {
    for p in v.chunks_exact_mut(2) {
        let r = p[0].hypot(p[1]);
        if r > 1.0 {
            p[0] /= r;
            p[1] /= r;
        }
    }
}

//! Two-phase pulse synthesis: a static frame first, then the full frame.

use super::bfgs::{clamp_pairs, minimize, BfgsOptions, StopReason};
use super::target::GateTarget;
use crate::dynamics::{Propagator, PulseSequence, Slice, SubstepPolicy};
use crate::error::{invalid, Result};
use crate::linalg::{CMat, C64};
use crate::rotframe::RotatingFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

/// Everything that defines one synthesis problem.
#[derive(Clone, Debug)]
pub struct OptimizationRun {
    pub target: GateTarget,
    /// Maps logical to bare coordinates of the frame.
    pub basis: CMat,
    pub n_slices: usize,
    pub slice_duration: f64,
    /// Starting point; random when `None`.
    pub initial: Option<PulseSequence>,
    /// Switch to the full frame below this error.
    pub rough_threshold: f64,
    pub rough_iterations: usize,
    pub max_iterations: usize,
    pub goal: f64,
    pub gradient_floor: f64,
    /// Integration used while optimizing in the full frame.
    pub accurate_policy: SubstepPolicy,
    /// Integration used for the reported final error.
    pub verify_policy: SubstepPolicy,
    /// Random initial amplitudes are uniform within this fraction of the maximum.
    pub init_fraction: f64,
    pub starts: usize,
    pub threads: usize,
}

impl OptimizationRun {
    pub fn new(target: GateTarget, basis: CMat, n_slices: usize, slice_duration: f64) -> Self {
        Self {
            target,
            basis,
            n_slices,
            slice_duration,
            initial: None,
            rough_threshold: 0.05,
            rough_iterations: 300,
            max_iterations: 400,
            goal: 1e-4,
            gradient_floor: 1e-9,
            accurate_policy: SubstepPolicy::magnus4(1.0),
            verify_policy: SubstepPolicy::default(),
            init_fraction: 0.05,
            starts: 1,
            threads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Rough,
    Accurate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub phase: Phase,
    pub iteration: usize,
    pub error: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub sequence: PulseSequence,
    /// Error of `sequence` in the full frame under `verify_policy`.
    pub error: f64,
    pub trace: Vec<TracePoint>,
    pub stop: StopReason,
    /// Whether `error` reached the goal.
    pub converged: bool,
    pub start: usize,
}

impl OptimizationResult {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("phase,iteration,error\n");
        for p in &self.trace {
            let ph = match p.phase {
                Phase::Rough => "rough",
                Phase::Accurate => "accurate",
            };
            s.push_str(&format!("{ph},{},{:.12e}\n", p.iteration, p.error));
        }
        s
    }
}

/// Error and gradient of a target with respect to scaled controls.
///
/// Variables are `(slice, channel, [x, y])` in units of each channel's
/// maximum Rabi frequency, so the feasible set is a product of unit disks.
pub struct Objective<'a> {
    propagator: Propagator<'a>,
    target: &'a GateTarget,
    basis: &'a CMat,
    n_slices: usize,
    slice_duration: f64,
    scale: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(
        frame: &'a RotatingFrame,
        policy: SubstepPolicy,
        target: &'a GateTarget,
        basis: &'a CMat,
        n_slices: usize,
        slice_duration: f64,
    ) -> Result<Self> {
        if target.dim() != frame.dim() || basis.nrows() != frame.dim() {
            return Err(crate::Error::DimensionMismatch(format!(
                "target dimension {} and frame dimension {} differ",
                target.dim(),
                frame.dim()
            )));
        }
        if n_slices == 0 || !(slice_duration > 0.0) {
            return Err(invalid("slices", "need at least one slice of positive duration"));
        }
        Ok(Self {
            propagator: Propagator::new(frame, policy)?,
            target,
            basis,
            n_slices,
            slice_duration,
            scale: frame.max_rabi.clone(),
        })
    }

    pub fn n_variables(&self) -> usize {
        self.n_slices * self.scale.len() * 2
    }

    pub fn sequence(&self, v: &[f64]) -> PulseSequence {
        let k = self.scale.len();
        PulseSequence::new(
            (0..self.n_slices)
                .map(|s| Slice {
                    duration: self.slice_duration,
                    amplitudes_hz: (0..k)
                        .map(|c| {
                            let i = (s * k + c) * 2;
                            C64::new(v[i], v[i + 1]) * (self.scale[c] / TAU)
                        })
                        .collect(),
                })
                .collect(),
        )
    }

    pub fn variables(&self, seq: &PulseSequence) -> Result<Vec<f64>> {
        let k = self.scale.len();
        if seq.len() != self.n_slices || seq.n_channels() != Some(k) {
            return Err(invalid("initial sequence", "shape does not match the run"));
        }
        let mut v = Vec::with_capacity(self.n_variables());
        for s in &seq.slices {
            for (c, z) in s.amplitudes_hz.iter().enumerate() {
                let w = z * (TAU / self.scale[c]);
                v.push(w.re);
                v.push(w.im);
            }
        }
        Ok(v)
    }

    fn logical(&self, u: &CMat) -> CMat {
        &(self.basis.adjoint() * u) * self.basis
    }

    pub fn error(&self, v: &[f64]) -> Result<f64> {
        let u = self.propagator.unitary(&self.sequence(v), 0.0)?;
        self.target.error(&self.logical(&u))
    }

    pub fn error_and_gradient(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        let seq = self.sequence(v);
        let u = self.propagator.unitary(&seq, 0.0)?;
        let (e, lambda) = self.target.error_and_weight(&self.logical(&u))?;
        let lambda_bare = &(self.basis * &lambda) * self.basis.adjoint();
        let raw = self.propagator.trace_gradient(&seq, 0.0, &u, &lambda_bare)?;
        let k = self.scale.len();
        let g = raw
            .iter()
            .enumerate()
            .map(|(i, r)| -r * self.scale[(i / 2) % k])
            .collect();
        Ok((e, g))
    }
}

fn random_start(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-fraction..=fraction)).collect()
}

/// Runs the two-phase optimization from one start.
pub fn optimize_from(
    run: &OptimizationRun,
    frame: &RotatingFrame,
    v0: Vec<f64>,
    start: usize,
) -> Result<OptimizationResult> {
    let rough_frame = frame.static_part();
    let rough = Objective::new(
        &rough_frame,
        SubstepPolicy::default(),
        &run.target,
        &run.basis,
        run.n_slices,
        run.slice_duration,
    )?;
    let accurate = Objective::new(
        frame,
        run.accurate_policy,
        &run.target,
        &run.basis,
        run.n_slices,
        run.slice_duration,
    )?;
    let mut trace = Vec::new();
    let opts = BfgsOptions {
        max_iterations: run.rough_iterations,
        goal: run.rough_threshold,
        gradient_floor: run.gradient_floor,
        ..BfgsOptions::default()
    };
    let r1 = minimize(|v| rough.error_and_gradient(v), &v0, clamp_pairs, &opts)?;
    trace.extend(r1.trace.iter().enumerate().map(|(i, &e)| TracePoint {
        phase: Phase::Rough,
        iteration: i,
        error: e,
    }));
    let opts = BfgsOptions {
        max_iterations: run.max_iterations,
        goal: run.goal,
        gradient_floor: run.gradient_floor,
        ..BfgsOptions::default()
    };
    let r2 = minimize(|v| accurate.error_and_gradient(v), &r1.x, clamp_pairs, &opts)?;
    trace.extend(r2.trace.iter().enumerate().map(|(i, &e)| TracePoint {
        phase: Phase::Accurate,
        iteration: i,
        error: e,
    }));
    let sequence = accurate.sequence(&r2.x);
    let error = if run.verify_policy == run.accurate_policy {
        r2.value
    } else {
        Objective::new(
            frame,
            run.verify_policy,
            &run.target,
            &run.basis,
            run.n_slices,
            run.slice_duration,
        )?
        .error(&r2.x)?
    };
    Ok(OptimizationResult {
        sequence,
        error,
        trace,
        stop: r2.stop,
        converged: error <= run.goal,
        start,
    })
}

/// Multi-start optimization; the result with the lowest final error wins
/// (ties go to the earlier start), independent of the thread count.
pub fn optimize(run: &OptimizationRun, frame: &RotatingFrame, seed: u64) -> Result<OptimizationResult> {
    if run.starts == 0 {
        return Err(invalid("starts", "must be at least one"));
    }
    let probe = Objective::new(
        frame,
        run.verify_policy,
        &run.target,
        &run.basis,
        run.n_slices,
        run.slice_duration,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vec<f64>> = (0..run.starts)
        .map(|i| match (&run.initial, i) {
            (Some(seq), 0) => probe.variables(seq),
            _ => Ok(random_start(probe.n_variables(), run.init_fraction, &mut rng)),
        })
        .collect::<Result<_>>()?;
    let threads = run.threads.max(1).min(starts.len());
    let mut results: Vec<Option<Result<OptimizationResult>>> = (0..starts.len()).map(|_| None).collect();
    if threads == 1 {
        for (i, v0) in starts.iter().enumerate() {
            results[i] = Some(optimize_from(run, frame, v0.clone(), i));
        }
    } else {
        std::thread::scope(|scope| {
            let chunks: Vec<Vec<usize>> = (0..threads)
                .map(|t| (t..starts.len()).step_by(threads).collect())
                .collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|idx| {
                    let starts = &starts;
                    scope.spawn(move || {
                        idx.into_iter()
                            .map(|i| (i, optimize_from(run, frame, starts[i].clone(), i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("optimizer thread panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }
    let mut best: Option<OptimizationResult> = None;
    for r in results.into_iter().map(|r| r.expect("every start ran")) {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.error < b.error) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one start"))
}

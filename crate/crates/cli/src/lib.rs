//! Batch tasks behind the `nvgrape` command.
//!
//! Each task reads an [`ExperimentConfig`], writes its artifacts into an
//! output directory and finishes with `manifest.txt`, which lists the SHA-256
//! of every other file in that directory.

use log::info;
use nvgrape::calib::{amplifier_settings, CalibrationCurve};
use nvgrape::dynamics::{
    entangling_gates, entangling_protocol, fit_sinusoid, local_pair, partial_swap, phi_dq, repeated_gate_benchmark,
    storage_csv, storage_sweep, FreeEvolution, NoiseModel, Op, PulseSequence, SubstepPolicy,
};
use nvgrape::entmetrics::{
    entanglement_upper_bound, estimate_nuclear_state, nuclear_bell_state, state_fidelity, BoundOptions,
    EstimateOptions, TomographyTriple,
};
use nvgrape::formats::{frame_dump, read_file, read_matrix, read_pulses, write_matrix, write_pulses, RegisterFile};
use nvgrape::grape::{optimize, register_not_target, GateTarget, OptimizationRun};
use nvgrape::linalg::{kron, projector, CMat};
use nvgrape::rotframe::FrameSettings;
use nvgrape::setup::{nv_channels, rectangular_pi_pulse, Setup};
use nvgrape::spinsys::{ControlChannel, NvLabel, RegisterModel};
use nvgrape::{Error, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// The batch tasks, one per subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Synthesize,
    Benchmark,
    Entangle,
    SwapStore,
    EstimateNuclear,
    EntanglementBound,
}

/// Noise either by name (`"none"`, `"reference"`) or spelled out.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NoiseSpec {
    Named(String),
    Custom(NoiseModel),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Named("none".into())
    }
}

impl NoiseSpec {
    fn model(&self, n_nv: usize) -> Result<NoiseModel> {
        let m = match self {
            NoiseSpec::Named(s) if s == "none" => NoiseModel::noiseless(n_nv),
            NoiseSpec::Named(s) if s == "reference" => {
                let mut m = NoiseModel::reference_pair();
                m.t2_dq_s.truncate(n_nv);
                m.t2_star_s.truncate(n_nv);
                m.polarization.truncate(n_nv);
                m
            }
            NoiseSpec::Named(s) => return Err(Error::Config(format!("unknown noise model `{s}`"))),
            NoiseSpec::Custom(m) => m.clone(),
        };
        m.validate()?;
        if m.n_nv() != n_nv {
            return Err(Error::Config(format!("noise model has {} NVs, task needs {n_nv}", m.n_nv())));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesizeParams {
    /// `"not"` (NV A electron qubit in the register) or `"swap"` (NV A alone).
    pub target: String,
    pub n_slices: usize,
    pub slice_duration_s: f64,
    pub goal: f64,
    pub rough_iterations: usize,
    pub max_iterations: usize,
    pub starts: usize,
    pub initial: Option<PathBuf>,
}

impl Default for SynthesizeParams {
    fn default() -> Self {
        Self {
            target: "not".into(),
            n_slices: 15,
            slice_duration_s: 0.4e-6,
            goal: 1e-4,
            rough_iterations: 300,
            max_iterations: 400,
            starts: 1,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkParams {
    /// Gate pulse file; a rectangular π pulse on channel 0 when absent.
    pub pulse: Option<PathBuf>,
    pub k_max: usize,
    pub tau_free_s: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            pulse: None,
            k_max: 17,
            tau_free_s: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EntangleParams {
    /// Total free-evolution time; `1/(8 ν_dip)` when absent.
    pub tau_s: Option<f64>,
    /// `"dipolar"` or `"frame"`.
    pub free_evolution: String,
    pub detuning_hz: [f64; 2],
}

impl Default for EntangleParams {
    fn default() -> Self {
        Self {
            tau_s: None,
            free_evolution: "dipolar".into(),
            detuning_hz: [0.0; 2],
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SwapStoreParams {
    /// SWAP pulse file for NV A alone; the exact gate when absent.
    pub pulse: Option<PathBuf>,
    pub storage_times_s: Vec<f64>,
    /// Initial nuclear Bloch vector.
    pub nuclear_bloch: [f64; 3],
}

impl Default for SwapStoreParams {
    fn default() -> Self {
        Self {
            pulse: None,
            storage_times_s: (0..=40).map(|k| k as f64 * 1e-6).collect(),
            nuclear_bloch: [0.0, 0.0, -1.0],
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateParams {
    pub rho_a: Option<PathBuf>,
    pub rho_b: Option<PathBuf>,
    pub rho_c: Option<PathBuf>,
    /// Register SWAP matrix file (36×36); the exact gate on both NVs when absent.
    pub swap: Option<PathBuf>,
    pub starts: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BoundParams {
    /// Density matrix file; the double-quantum Bell state when absent.
    pub state: Option<PathBuf>,
    pub split: [usize; 2],
    pub iterations: usize,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            state: None,
            split: [3, 3],
            iterations: 2000,
        }
    }
}

/// Everything a task may need. Relative paths resolve against the
/// directory of the config file.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Register file; the built-in reference pair when absent.
    pub register: Option<PathBuf>,
    /// Channel limit used when the register file lists no channels.
    pub max_rabi_hz: f64,
    /// One calibration per channel; each sets that channel's limit.
    pub calibrations: Vec<PathBuf>,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub threads: usize,
    pub synthesize: SynthesizeParams,
    pub benchmark: BenchmarkParams,
    pub entangle: EntangleParams,
    pub swap_store: SwapStoreParams,
    pub estimate_nuclear: EstimateParams,
    pub entanglement_bound: BoundParams,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            register: None,
            max_rabi_hz: 10e6,
            calibrations: Vec::new(),
            noise: NoiseSpec::default(),
            seed: 0,
            threads: 1,
            synthesize: SynthesizeParams::default(),
            benchmark: BenchmarkParams::default(),
            entangle: EntangleParams::default(),
            swap_store: SwapStoreParams::default(),
            estimate_nuclear: EstimateParams::default(),
            entanglement_bound: BoundParams::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&read_file(path)?, &base)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn read(&self, p: &Path) -> Result<String> {
        read_file(&self.resolve(p))
    }

    fn model_and_channels(&self) -> Result<(RegisterModel, Vec<ControlChannel>)> {
        let (model, mut channels) = match &self.register {
            Some(p) => {
                let f = RegisterFile::parse(&self.read(p)?)?;
                (f.model()?, f.channels)
            }
            None => (RegisterModel::reference_pair(), Vec::new()),
        };
        if channels.is_empty() {
            channels = nv_channels(&model, NvLabel::A, self.max_rabi_hz)?;
        }
        if !self.calibrations.is_empty() {
            let curves = self.curves()?;
            if curves.len() != channels.len() {
                return Err(Error::ChannelCountMismatch {
                    expected: channels.len(),
                    got: curves.len(),
                });
            }
            for (ch, c) in channels.iter_mut().zip(&curves) {
                ch.max_rabi_hz = c.max_rabi_hz();
            }
        }
        Ok((model, channels))
    }

    fn curves(&self) -> Result<Vec<CalibrationCurve>> {
        self.calibrations
            .iter()
            .map(|p| CalibrationCurve::parse(&self.read(p)?))
            .collect()
    }

    fn register_setup(&self) -> Result<Setup> {
        let (model, channels) = self.model_and_channels()?;
        Setup::register(&model, channels, &FrameSettings::default())
    }

    fn single_nv_setup(&self) -> Result<Setup> {
        let (model, channels) = self.model_and_channels()?;
        Setup::single_nv(&model.nv_a, model.static_field_t, channels, &FrameSettings::default())
    }
}

/// Collects output files and writes the manifest last.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        info!("wrote {name}");
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<String>> {
        self.files.sort();
        let mut manifest = String::new();
        for name in &self.files {
            let bytes = std::fs::read(self.dir.join(name))?;
            let _ = writeln!(manifest, "{}  {name}", hex::encode(Sha256::digest(&bytes)));
        }
        std::fs::write(self.dir.join("manifest.txt"), manifest)?;
        Ok(self.files)
    }
}

/// `key = value` lines.
#[derive(Default)]
struct Report(String);

impl Report {
    fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key} = {value}");
    }
}

/// Runs one task and returns the names of the files written (besides the manifest).
pub fn run(task: Task, config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<String>> {
    let mut out = Output::new(out_dir)?;
    match task {
        Task::Synthesize => synthesize(config, &mut out)?,
        Task::Benchmark => benchmark(config, &mut out)?,
        Task::Entangle => entangle(config, &mut out)?,
        Task::SwapStore => swap_store(config, &mut out)?,
        Task::EstimateNuclear => estimate_nuclear(config, &mut out)?,
        Task::EntanglementBound => entanglement_bound(config, &mut out)?,
    }
    out.finish()
}

fn synthesize(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = &cfg.synthesize;
    let (setup, target) = match p.target.as_str() {
        "not" => (cfg.register_setup()?, register_not_target()?),
        "swap" => (cfg.single_nv_setup()?, GateTarget::full(partial_swap())?),
        other => return Err(Error::Config(format!("unknown target `{other}`"))),
    };
    let mut run = OptimizationRun::new(target, setup.basis.clone(), p.n_slices, p.slice_duration_s);
    run.goal = p.goal;
    run.rough_iterations = p.rough_iterations;
    run.max_iterations = p.max_iterations;
    run.starts = p.starts.max(1);
    run.threads = cfg.threads.max(1);
    if let Some(path) = &p.initial {
        run.initial = Some(read_pulses(&cfg.read(path)?)?);
    }
    info!("synthesizing `{}` with {} starts", p.target, run.starts);
    let r = optimize(&run, &setup.frame, cfg.seed)?;
    out.write("pulses.txt", &write_pulses(&r.sequence))?;
    out.write("trace.csv", &r.trace_csv())?;
    out.write("frame.csv", &frame_dump(&setup.frame))?;
    if !cfg.calibrations.is_empty() {
        let settings = amplifier_settings(&r.sequence, &cfg.curves()?)?;
        let mut text = String::from("# slice then amplifier setting (re im) per carrier\n");
        for (i, row) in settings.iter().enumerate() {
            let _ = write!(text, "{i}");
            for z in row {
                let _ = write!(text, " {:e} {:e}", z.re, z.im);
            }
            text.push('\n');
        }
        out.write("settings.txt", &text)?;
    }
    let mut rep = Report::default();
    rep.put("target", &p.target);
    rep.put("error", format!("{:.6e}", r.error));
    rep.put("converged", r.converged);
    rep.put("stop", format!("{:?}", r.stop));
    rep.put("start", r.start);
    rep.put("iterations", r.trace.len());
    out.write("report.txt", &rep.0)
}

fn benchmark(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let setup = cfg.register_setup()?;
    let p = &cfg.benchmark;
    let seq = match &p.pulse {
        Some(path) => read_pulses(&cfg.read(path)?)?,
        None => rectangular_pi_pulse(setup.channels.len(), 0, setup.channels[0].max_rabi_hz),
    };
    let sim = setup.simulator(SubstepPolicy::default())?;
    let noise = cfg.noise.model(2)?;
    let gate = Op::Gate(sim.pulse_unitary(&seq, 0.0)?);
    let table = repeated_gate_benchmark(&sim, &gate, &noise, p.k_max, p.tau_free_s)?;
    out.write("benchmark.csv", &table.to_csv())?;
    let mut rep = Report::default();
    rep.put("gate", if p.pulse.is_some() { "pulse file" } else { "rectangular pi" });
    rep.put("target_fidelity", format!("{:.6}", table.target_fit.rate));
    rep.put("spectator_fidelity", format!("{:.6}", table.spectator_fit.rate));
    out.write("report.txt", &rep.0)
}

fn entangle(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let (model, _) = cfg.model_and_channels()?;
    // Ideal gates need no drive, so the frame is built without channels.
    let setup = Setup::register(&model, Vec::new(), &FrameSettings::default())?;
    let sim = setup.simulator(SubstepPolicy::default())?;
    let p = &cfg.entangle;
    let free = match p.free_evolution.as_str() {
        "dipolar" => FreeEvolution::DipolarOnly {
            dipolar_hz: model.dipolar_coupling_hz,
        },
        "frame" => FreeEvolution::Frame,
        other => return Err(Error::Config(format!("unknown free evolution `{other}`"))),
    };
    let tau = p.tau_s.unwrap_or(1.0 / (8.0 * model.dipolar_coupling_hz));
    let [a, b, c] = entangling_gates();
    let gates = [
        Op::Gate(local_pair(&sim, &a)?),
        Op::Gate(local_pair(&sim, &b)?),
        Op::Gate(local_pair(&sim, &c)?),
    ];
    let r = entangling_protocol(&sim, gates, tau, free, p.detuning_hz, &cfg.noise.model(2)?)?;
    out.write("electron_state.txt", &write_matrix(&r.electron_state, None))?;
    let mut rep = Report::default();
    rep.put("tau_s", format!("{tau:e}"));
    rep.put("fidelity", format!("{:.12}", r.fidelity));
    out.write("report.txt", &rep.0)
}

fn swap_store(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let setup = cfg.single_nv_setup()?;
    let sim = setup.simulator(SubstepPolicy::default())?;
    let p = &cfg.swap_store;
    let seq;
    let swap = match &p.pulse {
        Some(path) => {
            seq = read_pulses(&cfg.read(path)?)?;
            Op::Pulse(&seq)
        }
        None => Op::Gate(partial_swap()),
    };
    let nuclear = nvgrape::entmetrics::bloch_state(p.nuclear_bloch);
    let rows = storage_sweep(&sim, &swap, &cfg.noise.model(1)?, &nuclear, &p.storage_times_s)?;
    out.write("storage.csv", &storage_csv(&rows))?;
    let mut rep = Report::default();
    if let Some(last) = rows.last() {
        rep.put("final_efficiency", format!("{:.6}", last.efficiency));
    }
    if rows.len() >= 8 {
        let t: Vec<f64> = rows.iter().map(|r| r.storage_time).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.coherence.re).collect();
        let span = t.last().unwrap() - t[0];
        if span > 0.0 {
            let nyquist = 0.5 * (rows.len() - 1) as f64 / span;
            let fit = fit_sinusoid(&t, &y, 0.5 / span, nyquist)?;
            rep.put("oscillation_hz", format!("{:.3}", fit.frequency_hz));
        }
    }
    out.write("report.txt", &rep.0)
}

fn estimate_nuclear(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = &cfg.estimate_nuclear;
    let load = |name: &str, path: &Option<PathBuf>| -> Result<nvgrape::formats::MatrixFile> {
        let path = path
            .as_ref()
            .ok_or_else(|| Error::Config(format!("estimate_nuclear.{name} is required")))?;
        read_matrix(&cfg.read(path)?)
    };
    let a = load("rho_a", &p.rho_a)?;
    let b = load("rho_b", &p.rho_b)?;
    let c = load("rho_c", &p.rho_c)?;
    // Flags may come with either later tomography; an entry is magnitude-only
    // if any file marks it so, and all entries are when none carries flags.
    let mask = match (&b.magnitude_only, &c.magnitude_only) {
        (None, None) => vec![true; 81],
        (x, y) => (0..81)
            .map(|i| x.as_ref().is_some_and(|f| f[i]) || y.as_ref().is_some_and(|f| f[i]))
            .collect(),
    };
    let tomo = TomographyTriple::with_mask(a.matrix, b.matrix, c.matrix, mask)?;
    let swap = match &p.swap {
        Some(path) => read_matrix(&cfg.read(path)?)?.matrix,
        None => kron(&partial_swap(), &partial_swap()),
    };
    let opts = EstimateOptions {
        starts: p.starts.unwrap_or(16),
        ..Default::default()
    };
    let est = estimate_nuclear_state(&tomo, &swap, &opts, cfg.seed)?;
    out.write("nuclear_1.txt", &write_matrix(&est.n1, None))?;
    out.write("nuclear_2.txt", &write_matrix(&est.n2, None))?;
    out.write("nuclear_pair.txt", &write_matrix(&est.stored_state, None))?;
    let bell = projector(&nuclear_bell_state());
    let mut rep = Report::default();
    rep.put("residual", format!("{:.6e}", est.residual));
    rep.put("converged", est.converged);
    for (k, r) in est.bloch.iter().enumerate() {
        rep.put(&format!("bloch_{}", k + 1), format!("[{:.6}, {:.6}, {:.6}]", r[0], r[1], r[2]));
    }
    rep.put("bell_fidelity", format!("{:.6}", state_fidelity(&est.stored_state, &bell)?));
    out.write("report.txt", &rep.0)
}

fn entanglement_bound(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = &cfg.entanglement_bound;
    let rho: CMat = match &p.state {
        Some(path) => read_matrix(&cfg.read(path)?)?.matrix,
        None => projector(&phi_dq()),
    };
    let opts = BoundOptions {
        iterations: p.iterations,
        ..Default::default()
    };
    let r = entanglement_upper_bound(&rho, p.split[0], p.split[1], &opts, cfg.seed)?;
    out.write("separable_state.txt", &write_matrix(&r.sigma.state, None))?;
    let mut trace = String::from("iteration,bound\n");
    for (i, v) in r.trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{v:.12e}");
    }
    out.write("bound_trace.csv", &trace)?;
    let mut rep = Report::default();
    rep.put("bound_nats", format!("{:.6}", r.value));
    rep.put("components", r.sigma.components.len());
    out.write("report.txt", &rep.0)
}

/// Reads a pulse file (for callers that post-process synthesized sequences).
pub fn load_pulses(path: &Path) -> Result<PulseSequence> {
    read_pulses(&read_file(path)?)
}

/// The command-line chapter of the guide, compiled as a doctest.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
struct GuideCli;

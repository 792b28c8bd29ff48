use clap::{Parser, Subcommand};
use nvgrape_cli::{run, ExperimentConfig, Task};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nvgrape", version, about = "Pulse synthesis and protocol simulation for NV-center registers")]
struct Cli {
    #[command(subcommand)]
    task: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "NVGRAPE_OUT", default_value = "nvgrape-out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for multi-start optimization.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimize a pulse sequence for a target gate.
    Synthesize,
    /// Repeated-gate benchmark on the register.
    Benchmark,
    /// Electron entangling sequence with a Hahn echo.
    Entangle,
    /// Store an electron coherence in the nitrogen spin and retrieve it.
    SwapStore,
    /// Fit nuclear states to electron tomographies.
    EstimateNuclear,
    /// Upper bound on the relative entropy of entanglement of a state.
    EntanglementBound,
}

impl From<Command> for Task {
    fn from(c: Command) -> Self {
        match c {
            Command::Synthesize => Task::Synthesize,
            Command::Benchmark => Task::Benchmark,
            Command::Entangle => Task::Entangle,
            Command::SwapStore => Task::SwapStore,
            Command::EstimateNuclear => Task::EstimateNuclear,
            Command::EntanglementBound => Task::EntanglementBound,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    };
    let result = config.and_then(|mut c| {
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        if let Some(t) = cli.threads {
            c.threads = t;
        }
        run(cli.task.into(), &c, &cli.out)
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", cli.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

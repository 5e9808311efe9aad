//! `fockvqc`: sweeps, compiling runs and virtual-device jobs from the shell.
//!
//! Exit codes: 0 success, 1 job validation failure, 2 any other error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fockvqc::driver::{linspace, run_sweep, CompileConfig, DenominatorMode, SweepConfig};
use fockvqc::{
    compile_phase, precompile_two_mode, resolution_analysis, run_job, validate_job, write_sweep_csv, Backend,
    DeviceJob, Error, NoiseConfig, Placement,
};

#[derive(Parser)]
#[command(name = "fockvqc", version, about = "Photonic variational compiling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the beamsplitter-phase cost over a grid of phases.
    Sweep(SweepArgs),
    /// Gradient descent on the beamsplitter phase.
    Compile(CompileArgs),
    /// Phase resolution reachable with a given number of shots.
    Resolution {
        /// Comma-separated shot counts, each at least 10.
        #[arg(long, value_delimiter = ',', required = true)]
        shots_list: Vec<u64>,
    },
    /// Check a JSON job file against the device constraints.
    Validate { file: PathBuf },
    /// Rewrite U_BS(theta, phi) as a Mach-Zehnder gate and a phase shift.
    Decompose {
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long, allow_hyphen_values = true)]
        phi: f64,
    },
    /// Execute a JSON job file and write its count table.
    Run {
        file: PathBuf,
        /// CSV destination; the JSON header goes next to it as `<stem>.json`.
        /// Without it the CSV is printed and the header goes to stderr.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = -std::f64::consts::FRAC_PI_2, allow_hyphen_values = true)]
    phi_min: f64,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2, allow_hyphen_values = true)]
    phi_max: f64,
    #[arg(long, default_value_t = 21)]
    points: usize,
    #[arg(long, default_value_t = 50_000)]
    shots: u64,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Thermal loss as `eta,nbar[,before|after]`.
    #[arg(long, value_parser = parse_noise)]
    noise: Option<NoiseConfig>,
    /// Sample a gate-free reference job for every row.
    #[arg(long, conflicts_with_all = ["parallel", "regularized"])]
    paired: bool,
    /// Read the reference pattern from modes 2367 of the same job.
    #[arg(long, conflicts_with = "regularized")]
    parallel: bool,
    /// Use the model's expected reference count instead of sampling it.
    #[arg(long)]
    regularized: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Exact,
    Sampled,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    phi0: f64,
    #[arg(long, default_value_t = 0.3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = BackendKind::Exact)]
    backend: BackendKind,
    /// Shots per cost evaluation on the sampled backend.
    #[arg(long, default_value_t = 50_000)]
    shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop once |gradient| is below this.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

fn parse_noise(s: &str) -> Result<NoiseConfig, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if !(2..=3).contains(&parts.len()) {
        return Err("expected eta,nbar[,placement]".into());
    }
    let eta = parts[0].parse::<f64>().map_err(|e| format!("eta: {e}"))?;
    let nbar = parts[1].parse::<f64>().map_err(|e| format!("nbar: {e}"))?;
    let placement = match parts.get(2) {
        Some(p) => p.parse::<Placement>().map_err(|e| e.to_string())?,
        None => Placement::default(),
    };
    Ok(NoiseConfig::new(eta, nbar, placement))
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_job(path: &Path) -> anyhow::Result<Result<DeviceJob, Error>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(DeviceJob::from_json(&text))
}

fn sweep(args: SweepArgs) -> anyhow::Result<ExitCode> {
    let denominator = if args.paired {
        DenominatorMode::Paired
    } else if args.parallel {
        DenominatorMode::Parallel
    } else if args.regularized {
        DenominatorMode::Regularized(None)
    } else {
        DenominatorMode::Precomputed
    };
    let config = SweepConfig {
        grid: linspace(args.phi_min, args.phi_max, args.points)?,
        shots: args.shots,
        runs: args.runs,
        noise: args.noise,
        denominator,
        seed: args.seed,
    };
    let result = run_sweep(&config)?;
    write_sweep_csv(&result, output(args.out.as_deref())?)?;
    let flagged = result.rows.iter().filter(|r| r.status != "ok").count();
    if flagged > 0 {
        eprintln!("{flagged} rows had a zero denominator");
    }
    if let Some(phi) = result.argmin() {
        eprintln!("argmin phi = {phi:.6}");
    }
    Ok(ExitCode::SUCCESS)
}

fn compile(args: CompileArgs) -> anyhow::Result<ExitCode> {
    let backend = match args.backend {
        BackendKind::Exact => Backend::Exact,
        BackendKind::Sampled => Backend::Sampled { shots: args.shots, seed: args.seed },
    };
    let config = CompileConfig { phi0: args.phi0, lr: args.lr, max_iters: args.iters, backend, tol: args.tol };
    match compile_phase(&config) {
        Ok(trace) => {
            println!("{}", serde_json::to_string_pretty(&trace)?);
            Ok(ExitCode::SUCCESS)
        }
        Err(Error::Diverged(trace)) => {
            println!("{}", serde_json::to_string_pretty(&trace)?);
            bail!("optimizer diverged after {} steps", trace.steps.len())
        }
        Err(e) => Err(e.into()),
    }
}

fn validate(file: &Path) -> anyhow::Result<ExitCode> {
    let job = match load_job(file)? {
        Ok(job) => job,
        Err(e) => {
            eprintln!("invalid job file: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    match validate_job(&job) {
        Ok(()) => {
            println!("ok");
            Ok(ExitCode::SUCCESS)
        }
        Err(violations) => {
            for v in &violations {
                println!("{v}");
            }
            Ok(ExitCode::from(1))
        }
    }
}

fn run(file: &Path, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let job = match load_job(file)? {
        Ok(job) => job,
        Err(e) => {
            eprintln!("invalid job file: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    let table = match run_job(&job) {
        Ok(t) => t,
        Err(Error::InvalidJob(violations)) => {
            for v in &violations {
                eprintln!("{v}");
            }
            return Ok(ExitCode::from(1));
        }
        Err(e) => return Err(e.into()),
    };
    let header = serde_json::to_string_pretty(&table.header())?;
    match out {
        Some(path) => {
            table.write_csv(output(Some(path))?)?;
            let header_path = path.with_extension("json");
            std::fs::write(&header_path, header).with_context(|| format!("writing {}", header_path.display()))?;
        }
        None => {
            eprintln!("{header}");
            table.write_csv(io::stdout().lock())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Sweep(args) => sweep(args),
        Command::Compile(args) => compile(args),
        Command::Resolution { shots_list } => {
            let mut w = io::stdout().lock();
            writeln!(w, "shots,delta,reference,ratio")?;
            for r in resolution_analysis(&shots_list)? {
                writeln!(w, "{},{},{},{}", r.shots, r.delta, r.reference, r.ratio)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { file } => validate(&file),
        Command::Decompose { theta, phi } => {
            println!("{}", serde_json::to_string_pretty(&precompile_two_mode(theta, phi)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { file, out } => run(&file, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

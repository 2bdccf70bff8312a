//! `convcs` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3
//! verification failure.

mod runs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use convcs::formats::{read_ccsm, read_ccsn, write_ccsm, write_ccsn};
use convcs::imageio::{read_image, write_image};
use convcs::nn::{reconstruct, NetConfig, NetworkParams};
use convcs::sensing::{add_noise, back_project, make_filter_bank, sense_image, Preset};
use convcs::solver::{reconstruct_iterative, AnalysisFilterBank, SolverConfig};
use convcs::train::net_config_for;
use convcs::verify::{run_suite, Suite};
use convcs::Error;

#[derive(Parser)]
#[command(name = "convcs", version, about = "Convolutional compressive sensing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReconMethod {
    Adjoint,
    Ista,
    Net,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Adjoint,
    Oracle,
    Gradcheck,
    Frame,
}

#[derive(clap::Args)]
struct Geometry {
    /// rate0.05, rate0.05-corrected, rate0.1, rate0.2 or rate0.3
    #[arg(long, conflicts_with_all = ["m", "size", "stride"])]
    preset: Option<Preset>,
    /// Number of sensing filters.
    #[arg(short, requires_all = ["size", "stride"])]
    m: Option<usize>,
    /// Filter size L.
    #[arg(short = 'L', long = "size")]
    size: Option<usize>,
    /// Stride s.
    #[arg(short, long)]
    stride: Option<usize>,
}

impl Geometry {
    fn params(&self) -> Result<(usize, usize, usize), Error> {
        match (self.preset, self.m, self.size, self.stride) {
            (Some(p), ..) => Ok(p.params()),
            (None, Some(m), Some(l), Some(s)) => Ok((m, l, s)),
            (None, None, None, None) => Ok(Preset::Rate02.params()),
            _ => Err(Error::Parameter("give --preset or all of -m, -L, -s".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sense an image and write a .ccsm measurement file.
    Sense {
        input: PathBuf,
        #[command(flatten)]
        geometry: Geometry,
        /// Measurement noise standard deviation on the 0-255 scale.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Seed of the sensing filters (the noise stream is derived from it).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sense with the (possibly trained) filters of this checkpoint.
        #[arg(long, conflicts_with_all = ["preset", "m", "size", "stride"])]
        checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Reconstruct an image from a .ccsm file.
    Reconstruct {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "ista")]
        method: ReconMethod,
        #[arg(long, required_if_eq("method", "net"))]
        checkpoint: Option<PathBuf>,
        /// Write the solver's objective trace here (ista only).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        /// Output image (.pgm, or .png by extension).
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a verification suite.
    Verify {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network from a manifest.
    Train {
        manifest: PathBuf,
        /// Parent of the content-addressed run directories.
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
    },
    /// Evaluate reconstructors from a manifest.
    Eval {
        manifest: PathBuf,
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
    },
    /// Write a freshly initialised checkpoint.
    InitCheckpoint {
        #[command(flatten)]
        geometry: Geometry,
        #[arg(long)]
        stages: Option<usize>,
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        #[arg(long, default_value_t = 0)]
        sensing_seed: u64,
        /// Zero every stage scalar except delta = 1, so the network returns x0.
        #[arg(long)]
        delta_only: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn sense_cmd(
    input: &Path,
    geometry: &Geometry,
    noise: f64,
    seed: u64,
    checkpoint: Option<&Path>,
    output: &Path,
) -> Result<(), Failure> {
    let img = read_image(input)?;
    let bank = match checkpoint {
        Some(c) => {
            let (cfg, params) = read_ccsn(c)?;
            params.sensing_bank(&cfg)?
        }
        None => {
            let (m, l, s) = geometry.params()?;
            make_filter_bank(m, l, s, seed)?
        }
    };
    let y = add_noise(&sense_image(&img, &bank)?, noise, seed ^ 0x6e6f_6973_65)?;
    write_ccsm(output, &y)?;
    let (gh, gw) = y.meta.grid();
    println!(
        "sensed {}x{} (padded to {}x{}) with m={} L={} s={}: {} measurements, achieved rate {}",
        img.height(),
        img.width(),
        y.meta.height,
        y.meta.width,
        bank.count(),
        bank.size(),
        bank.stride(),
        bank.count() * gh * gw,
        y.achieved_rate()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reconstruct_cmd(
    input: &Path,
    method: ReconMethod,
    checkpoint: Option<&Path>,
    trace: Option<&Path>,
    eta: Option<f64>,
    tau: Option<f64>,
    iters: Option<usize>,
    output: &Path,
) -> Result<(), Failure> {
    let y = read_ccsm(input)?;
    let meta = &y.meta;
    let x = match method {
        ReconMethod::Adjoint => back_project(&y, &meta.filter_bank()?)?,
        ReconMethod::Ista => {
            let d = SolverConfig::default();
            let cfg = SolverConfig {
                eta: eta.unwrap_or(d.eta),
                tau: tau.unwrap_or(d.tau),
                max_iters: iters.unwrap_or(d.max_iters),
                ..d
            };
            let out = reconstruct_iterative(&y, &meta.filter_bank()?, &AnalysisFilterBank::default(), &cfg)?;
            if let Some(path) = trace {
                let mut buf = Vec::new();
                out.write_trace(&mut buf)?;
                convcs::formats::write_atomic(path, &buf)?;
            }
            eprintln!("{} iterations, converged: {}", out.iterations(), out.converged);
            out.image
        }
        ReconMethod::Net => {
            let path = checkpoint.ok_or_else(|| Failure::Usage("--checkpoint is required for --method net".into()))?;
            let (cfg, params) = read_ccsn(path)?;
            if (cfg.m, cfg.size, cfg.stride) != (meta.filters, meta.filter_size, meta.stride) {
                return Err(Failure::Data(format!(
                    "checkpoint does not match the measurements\n  checkpoint:   {cfg}\n  measurements: m={} L={} s={} seed={} image={}x{}",
                    meta.filters, meta.filter_size, meta.stride, meta.seed, meta.height, meta.width
                )));
            }
            if cfg.sensing_seed != meta.seed {
                eprintln!(
                    "warning: measurements use sensing seed {}, checkpoint was initialised from seed {}",
                    meta.seed, cfg.sensing_seed
                );
            }
            reconstruct(&params, &cfg, &y)?
        }
    };
    write_image(output, &meta.crop_to_original(&x)?)?;
    Ok(())
}

fn verify_cmd(suite: SuiteArg, seed: u64) -> Result<(), Failure> {
    let suite = match suite {
        SuiteArg::Adjoint => Suite::Adjoint,
        SuiteArg::Oracle => Suite::Oracle,
        SuiteArg::Gradcheck => Suite::Gradcheck,
        SuiteArg::Frame => Suite::Frame,
    };
    let report = run_suite(suite, seed)?;
    println!(
        "{suite}: {} cases, max error {:.3e}, tolerance {:.0e}",
        report.cases.len(),
        report.max_error(),
        report.tolerance()
    );
    if report.passed() {
        println!("PASS");
        return Ok(());
    }
    let failing: Vec<String> = report
        .failures()
        .map(|c| format!("  {} (seed {}): {:.3e} > {:.0e}", c.name, c.seed, c.error, c.tolerance))
        .collect();
    Err(Failure::Verification(format!("FAIL\n{}", failing.join("\n"))))
}

fn init_cmd(
    geometry: &Geometry,
    stages: Option<usize>,
    init_seed: u64,
    sensing_seed: u64,
    delta_only: bool,
    output: &Path,
) -> Result<(), Failure> {
    let (m, l, s) = geometry.params()?;
    let mut cfg = match geometry.preset {
        Some(p) => net_config_for(p),
        None => NetConfig::new(m, l, s),
    };
    if let Some(t) = stages {
        cfg.stages = t;
    }
    cfg.init_seed = init_seed;
    cfg.sensing_seed = sensing_seed;
    let mut params = NetworkParams::<f32>::init(&cfg)?;
    if delta_only {
        params.set_stage_scalars(&cfg, [0.0, 1.0, 0.0]);
    }
    write_ccsn(output, &cfg, &params)?;
    println!("{cfg}: {} parameters", params.count());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sense {
            input,
            geometry,
            noise,
            seed,
            checkpoint,
            output,
        } => sense_cmd(&input, &geometry, noise, seed, checkpoint.as_deref(), &output),
        Command::Reconstruct {
            input,
            method,
            checkpoint,
            trace,
            eta,
            tau,
            iters,
            output,
        } => reconstruct_cmd(&input, method, checkpoint.as_deref(), trace.as_deref(), eta, tau, iters, &output),
        Command::Verify { suite, seed } => verify_cmd(suite, seed),
        Command::Train { manifest, runs } => {
            let dir = runs::cmd_train(&manifest, &runs)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Eval { manifest, runs } => {
            let (dir, table, complete) = runs::cmd_eval(&manifest, &runs)?;
            print!("{table}");
            println!("{}", dir.display());
            if complete {
                Ok(())
            } else {
                Err(Failure::Data("some evaluation cells failed".into()))
            }
        }
        Command::InitCheckpoint {
            geometry,
            stages,
            init_seed,
            sensing_seed,
            delta_only,
            output,
        } => init_cmd(&geometry, stages, init_seed, sensing_seed, delta_only, &output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("{m}");
            ExitCode::from(3)
        }
    }
}

//! Argument parsing. Usage errors exit with 1, like every other input error.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::artifacts::{DEFAULT_OUT, OUT_ENV};
use crate::commands::execute;
use crate::manifest::{replay, Params};

#[derive(Debug, Parser)]
#[command(
    name = "minsemi",
    version,
    about = "Minimal diffusion semigroups: resolvents, kernels, invariant densities and entropy production"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Seed for every random stream (overrides experiment.mc.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exhaustion tolerance (overrides experiment.tol).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Largest ball index (overrides domain.max_index).
    #[arg(long)]
    pub max_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Nullspace,
    TimeAverage,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check smoothness, the divergence bound and ellipticity on samples.
    Validate(Common),
    /// Global resolvent R(lambda) f by exhaustion.
    Resolvent(Common),
    /// Backward and forward evolution plus the mass function.
    Evolve(Common),
    /// Full transition kernel at time t.
    Kernel(Common),
    /// Invariant density.
    Stationary {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "nullspace")]
        method: Method,
        /// Write checkpoint.txt every this many time-average steps.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Resume a time-average march from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Entropy, production and dissipation rates, free energy.
    Thermo(Common),
    /// Reversibility verdict from three independent tests.
    Classify(Common),
    /// Monte-Carlo ensemble, heat rate and generating function.
    Simulate(Common),
    /// PDE against Monte-Carlo.
    Crossval(Common),
    /// Entropy production across experiment.omega_sweep.
    Sweep(Common),
    /// Long-format plot data from an earlier artifact.
    Plot {
        #[arg(long)]
        artifact: PathBuf,
        /// convergence, decay, density, gf or sweep.
        #[arg(long)]
        kind: String,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Re-run a manifest and require byte-identical outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to replay/ beside the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn common_params(c: &Common) -> Params {
    Params {
        seed: c.seed,
        tol: c.tol,
        max_index: c.max_index,
        ..Params::default()
    }
}

fn run_common(name: &str, c: Common, extra: impl FnOnce(&mut Params)) -> u8 {
    let text = match fs::read_to_string(&c.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", c.config.display());
            return 1;
        }
    };
    let mut p = common_params(&c);
    extra(&mut p);
    execute(name, Some(&text), &p, &out_dir(c.out)).exit_code
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Validate(c) => run_common("validate", c, |_| {}),
        Command::Resolvent(c) => run_common("resolvent", c, |_| {}),
        Command::Evolve(c) => run_common("evolve", c, |_| {}),
        Command::Kernel(c) => run_common("kernel", c, |_| {}),
        Command::Stationary {
            common,
            method,
            checkpoint_every,
            resume,
        } => run_common("stationary", common, |p| {
            p.method = Some(
                match method {
                    Method::Nullspace => "nullspace",
                    Method::TimeAverage => "time-average",
                }
                .into(),
            );
            p.checkpoint_every = checkpoint_every;
            p.resume = resume.map(|r| r.display().to_string());
        }),
        Command::Thermo(c) => run_common("thermo", c, |_| {}),
        Command::Classify(c) => run_common("classify", c, |_| {}),
        Command::Simulate(c) => run_common("simulate", c, |_| {}),
        Command::Crossval(c) => run_common("crossval", c, |_| {}),
        Command::Sweep(c) => run_common("sweep", c, |_| {}),
        Command::Plot { artifact, kind, out } => {
            let p = Params {
                kind: Some(kind),
                artifact: Some(artifact.display().to_string()),
                ..Params::default()
            };
            execute("plot", None, &p, &out_dir(out)).exit_code
        }
        Command::Replay { manifest, out } => match replay(&manifest, out) {
            Ok(m) => {
                println!("replay matched: {} outputs identical", m.outputs.len());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    }
}

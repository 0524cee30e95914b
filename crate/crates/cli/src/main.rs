mod analyze;
mod compile;
mod config;
mod output;
mod run;
mod spectrum;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, SweepParam};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(kagome_gibbs::Error),
}

impl From<kagome_gibbs::Error> for CliError {
    fn from(e: kagome_gibbs::Error) -> Self {
        use kagome_gibbs::Error as E;
        match e {
            E::InvalidLattice(m) | E::InvalidConfig(m) | E::InvalidOperator(m) | E::Parse(m) => CliError::Config(m),
            E::Io(e) => CliError::Io(e),
            e => CliError::Core(e),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(_) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "kgibbs", version, about = "Dissipative Gibbs-state preparation experiments")]
struct Cli {
    /// Root directory for results.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "KGIBBS_WORKERS", default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Source {
    /// Experiment configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment preset.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    pub fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => ExperimentConfig::load(path)?,
            (None, Some(name)) => config::preset(name)?,
            _ => return Err(CliError::Config("pass --config <file> or --preset <name>".into())),
        };
        if let Some(seed) = self.seed {
            cfg.channel.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a trajectory ensemble and write CSV results with a manifest.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long)]
        n_resets: Option<usize>,
    },
    /// Run one ensemble per value of a channel parameter.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[arg(long, requires = "values")]
        param: Option<SweepParam>,
        /// Comma-separated values; `inf` is accepted.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<config::Real>>,
        #[arg(long)]
        n_traj: Option<usize>,
    },
    /// Exact spectrum and thermal energies of the configured model.
    Spectrum {
        #[command(flatten)]
        source: Source,
        /// Inverse temperatures for the thermal table.
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,3,inf")]
        betas: Vec<config::Real>,
        /// Keep only states within cutoff/beta of the ground state.
        #[arg(long)]
        low_energy: Option<config::Real>,
    },
    /// Heavy-hex schedule of one Trotter step and its depth report.
    Compile(compile::CompileArgs),
    /// Post-processing of run outputs and reset calibrations.
    Analyze {
        #[command(subcommand)]
        command: analyze::AnalyzeCommand,
    },
    /// List the built-in presets.
    Presets,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { source, n_traj, n_resets } => {
            let mut cfg = source.load()?;
            if let Some(n) = n_traj {
                cfg.run.n_traj = n;
            }
            if let Some(n) = n_resets {
                cfg.run.n_resets = n;
                cfg.run.report_cycle = cfg.run.report_cycle.map(|c| c.min(n));
            }
            cfg.validate()?;
            let out = run::execute(&cfg, &cli.out, cli.workers)?;
            println!("{}", out.report.trim_end());
            println!("results in {}", out.dir.display());
        }
        Command::Sweep { source, param, values, n_traj } => {
            let mut cfg = source.load()?;
            if let (Some(param), Some(values)) = (param, values) {
                cfg.sweep = Some(config::SweepConfig { param, values });
            }
            if let Some(n) = n_traj {
                cfg.run.n_traj = n;
            }
            cfg.validate()?;
            let dir = run::sweep(&cfg, &cli.out, cli.workers)?;
            println!("sweep results in {}", dir.display());
        }
        Command::Spectrum { source, betas, low_energy } => {
            let cfg = source.load()?;
            let betas: Vec<f64> = betas.iter().map(|b| b.0).collect();
            let dir = spectrum::execute(&cfg, &cli.out, &betas, low_energy.map(|c| c.0))?;
            println!("spectrum in {}", dir.display());
        }
        Command::Compile(args) => compile::execute(&args, &cli.out)?,
        Command::Analyze { command } => analyze::execute(command, &cli.out)?,
        Command::Presets => {
            for p in config::PRESETS {
                println!("{}", p.name);
            }
            for p in config::LATTICE_PRESETS {
                println!("{} (lattice)", p.name);
            }
        }
    }
    Ok(())
}

/// OpenBLAS picks broken kernels on some CPUs. When the self-test fails and no
/// core type was forced, rerun with a known-good one.
fn ensure_blas() -> Option<ExitCode> {
    const VAR: &str = "OPENBLAS_CORETYPE";
    if kagome_gibbs::linalg::check_blas().is_ok() || std::env::var_os(VAR).is_some() {
        return None;
    }
    let exe = std::env::current_exe().ok()?;
    let status = std::process::Command::new(exe).args(std::env::args_os().skip(1)).env(VAR, "Haswell").status().ok()?;
    Some(ExitCode::from(status.code().unwrap_or(3) as u8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(code) = ensure_blas() {
        return code;
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kgibbs: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

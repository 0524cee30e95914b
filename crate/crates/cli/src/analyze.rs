use std::path::{Path, PathBuf};

use clap::Subcommand;
use serde_json::json;

use kagome_gibbs::analysis::{
    beta_max, beta_max_asymptotic, mixing_time, o1_for_beta_max, reset_beta_star, zne_fit, ObservableSeries,
    SeriesMeta, ZneModel, ZnePoint,
};
use kagome_gibbs::oracle::{beta_eff, EnergyCurve};

use crate::config::{ExperimentConfig, Real};
use crate::output::{num, Table};
use crate::{CliError, CliResult, Source};

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FitModel {
    Exponential,
    Linear,
    Auto,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Mixing times of a run's fidelity series; writes mixing.csv into the run.
    Mixing {
        /// Run directory containing fidelity.csv and config.toml.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.8")]
        thresholds: Vec<f64>,
    },
    /// Pointwise comparison of energy against rescaled resets for two runs.
    Compare {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        against: PathBuf,
    },
    /// Zero-noise extrapolation of a CSV with columns p, value, stderr.
    Zne {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        model: FitModel,
    },
    /// Effective inverse temperature of an imperfect environment reset.
    BetaStar {
        /// Confusion column sums as `c00,c01`: P(read 0 | prepared 0), P(read 0 | prepared 1).
        #[arg(long, value_delimiter = ',')]
        confusion: Vec<f64>,
        /// Prepared populations `p0,p1`.
        #[arg(long, value_delimiter = ',', default_value = "1,0")]
        input: Vec<f64>,
        #[arg(long)]
        beta: Real,
        #[arg(long, default_value_t = 8.0)]
        omega_max: f64,
    },
    /// Largest reachable inverse temperature for a residual excitation O1.
    BetaMax {
        #[arg(long, conflicts_with = "beta_max", required_unless_present = "beta_max")]
        o1: Option<f64>,
        /// Invert: the O1 that limits the reset to this value.
        #[arg(long)]
        beta_max: Option<f64>,
        #[arg(long, default_value_t = 8.0)]
        omega_max: f64,
    },
    /// Inverse temperature whose exact thermal energy per site matches a target.
    BetaEff {
        #[command(flatten)]
        source: Source,
        #[arg(long, allow_hyphen_values = true)]
        energy_per_site: f64,
        #[arg(long, default_value_t = 0.0)]
        err: f64,
    },
}

struct Columns {
    header: csv::StringRecord,
    rows: Vec<csv::StringRecord>,
    path: PathBuf,
}

impl Columns {
    fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let header = r.headers()?.clone();
        let rows = r.records().collect::<Result<Vec<_>, _>>()?;
        Ok(Columns { header, rows, path: path.into() })
    }

    fn get(&self, name: &str) -> CliResult<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{} has no column `{name}`", self.path.display())))?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<Real>().map(|v| v.0).map_err(|e| CliError::Config(format!("{}: {e}", self.path.display())))
            })
            .collect()
    }
}

fn run_config(run: &Path) -> CliResult<ExperimentConfig> {
    ExperimentConfig::load(&run.join("config.toml"))
}

fn series(run: &Path, file: &str, x: &str, y: &str, se: &str) -> CliResult<(ExperimentConfig, ObservableSeries)> {
    let cfg = run_config(run)?;
    let model = cfg.model.build()?;
    let cols = Columns::read(&run.join(file))?;
    let meta =
        SeriesMeta { n_sys: model.n_sites, n_env: cfg.channel.n_env, beta: cfg.channel.beta, model: cfg.name.clone() };
    let s = ObservableSeries::new(cols.get(x)?, cols.get(y)?, cols.get(se)?, meta)?;
    Ok((cfg, s))
}

/// Finite values as JSON numbers, the rest as strings such as `"inf"`.
fn jnum(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(num(x))
    }
}

fn pair(v: &[f64], flag: &str) -> CliResult<[f64; 2]> {
    match v {
        &[a, b] => Ok([a, b]),
        _ => Err(CliError::Config(format!("--{flag} takes two comma-separated values"))),
    }
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}

pub fn execute(cmd: AnalyzeCommand, out: &Path) -> CliResult<()> {
    match cmd {
        AnalyzeCommand::Mixing { run, thresholds } => {
            let (cfg, s) = series(&run, "fidelity.csv", "cycle", "F", "stderr")?;
            let mut t = Table::create(&run, "mixing.csv", &["threshold", "tau", "lower", "upper", "reached"])?;
            let mut items = Vec::new();
            for thr in thresholds {
                let m = mixing_time(&s, thr, cfg.channel.n_env, s.meta.n_sys)?;
                t.row([num(thr), num(m.tau), num(m.lower), num(m.upper), (!m.open_upper).to_string()])?;
                items.push(json!({"threshold": thr, "tau": jnum(m.tau), "lower": jnum(m.lower), "upper": jnum(m.upper), "reached": !m.open_upper}));
            }
            t.finish()?;
            print(json!({"run": cfg.name, "mixing": items}));
        }
        AnalyzeCommand::Compare { run, against } => {
            let (a_cfg, a) = series(&run, "summary.csv", "rescaled", "energy_per_site", "energy_per_site_se")?;
            let (b_cfg, b) = series(&against, "summary.csv", "rescaled", "energy_per_site", "energy_per_site_se")?;
            let dir = out.join("analysis");
            std::fs::create_dir_all(&dir)?;
            let name = format!("compare-{}-{}.csv", a_cfg.name, b_cfg.name);
            let mut t = Table::create(&dir, &name, &["rescaled", "a", "a_se", "b", "b_se", "z"])?;
            let mut worst = 0.0f64;
            let mut points = 0;
            for i in 0..a.len() {
                let Some((bv, bse)) = b.interpolate(a.x[i]) else { continue };
                let combined = (a.stderr[i].powi(2) + bse.powi(2)).sqrt();
                let z = if combined > 0.0 { (a.mean[i] - bv).abs() / combined } else { 0.0 };
                worst = worst.max(z);
                points += 1;
                t.row([num(a.x[i]), num(a.mean[i]), num(a.stderr[i]), num(bv), num(bse), num(z)])?;
            }
            t.finish()?;
            print(
                json!({"run": a_cfg.name, "against": b_cfg.name, "points": points, "max_z": worst, "csv": dir.join(name)}),
            );
        }
        AnalyzeCommand::Zne { csv, model } => {
            let cols = Columns::read(&csv)?;
            let points: Vec<ZnePoint> = cols
                .get("p")?
                .into_iter()
                .zip(cols.get("value")?)
                .zip(cols.get("stderr")?)
                .map(|((p, value), stderr)| ZnePoint { p, value, stderr })
                .collect();
            let model = match model {
                FitModel::Exponential => ZneModel::Exponential,
                FitModel::Linear => ZneModel::Linear,
                FitModel::Auto => ZneModel::Auto,
            };
            let fit = zne_fit(&points, model)?;
            print(serde_json::to_value(fit).expect("json"));
        }
        AnalyzeCommand::BetaStar { confusion, input, beta, omega_max } => {
            let [c00, c01] = pair(&confusion, "confusion")?;
            let x_r = [[c00, c01], [1.0 - c00, 1.0 - c01]];
            let r = reset_beta_star(x_r, pair(&input, "input")?, beta.0, omega_max)?;
            print(
                json!({"excitation": r.excitation, "beta_star": jnum(r.beta_star), "negative_temperature": r.negative_temperature}),
            );
        }
        AnalyzeCommand::BetaMax { o1, beta_max: target, omega_max } => match (o1, target) {
            (Some(o1), _) => print(json!({
                "o1": o1,
                "beta_max": jnum(beta_max(o1, omega_max)?),
                "asymptotic": jnum(beta_max_asymptotic(o1, omega_max)),
            })),
            (None, Some(b)) => print(json!({"beta_max": b, "o1": o1_for_beta_max(b, omega_max)})),
            (None, None) => return Err(CliError::Config("pass --o1 or --beta-max".into())),
        },
        AnalyzeCommand::BetaEff { source, energy_per_site, err } => {
            let cfg = source.load()?;
            let model = cfg.model.build()?;
            let n = model.n_sites as f64;
            let curve = EnergyCurve::from_hamiltonian(&model.hamiltonian, model.n_sites)?;
            let b = beta_eff(&curve, energy_per_site * n, err * n)?;
            print(json!({"beta_eff": jnum(b.beta), "lower": jnum(b.lower), "upper": jnum(b.upper)}));
        }
    }
    Ok(())
}

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use kagome_gibbs::oracle::{exact_spectrum, thermal_expectation, EnergyCurve, SpectrumCache, SpectrumMode};

use crate::config::ExperimentConfig;
use crate::output::{num, run_dir, RunManifest, Table};
use crate::run::low_energy_spectrum;
use crate::CliResult;

pub fn execute(cfg: &ExperimentConfig, out: &Path, betas: &[f64], low_energy: Option<f64>) -> CliResult<PathBuf> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let model = cfg.model.build()?;
    let n = model.n_sites as f64;
    let spec = match low_energy {
        Some(cutoff) => low_energy_spectrum(cfg, &model, cutoff, cfg.channel.beta, out)?,
        None => {
            let material = format!("{}\ndense", toml::to_string(&cfg.model).expect("model serializes"));
            SpectrumCache::new(out.join("cache"))
                .get_or_compute(&material, || exact_spectrum(&model.hamiltonian, model.n_sites, SpectrumMode::Dense))?
        }
    };
    let dir = run_dir(out, cfg)?.join("spectrum");
    std::fs::create_dir_all(&dir)?;

    let mut t = Table::create(&dir, "spectrum.csv", &["index", "energy", "energy_per_site"])?;
    for (i, &e) in spec.energies.iter().enumerate() {
        t.row([i.to_string(), num(e), num(e / n)])?;
    }
    let mut files = vec![t.finish()?];

    let curve = if spec.is_complete() { Some(EnergyCurve::from_spectrum(&spec)?) } else { None };
    let mut t = Table::create(&dir, "thermal.csv", &["beta", "energy", "energy_per_site", "heaviest_discarded"])?;
    for &beta in betas {
        let (e, lost) = match &curve {
            Some(c) => (c.energy(beta), 0.0),
            None => {
                let v = thermal_expectation(&spec, beta, &model.hamiltonian)?;
                (v.value, v.heaviest_discarded)
            }
        };
        t.row([num(beta), num(e), num(e / n), num(lost)])?;
    }
    files.push(t.finish()?);
    files.iter_mut().for_each(|f| *f = format!("spectrum/{f}"));
    RunManifest::new("spectrum", cfg, started, clock.elapsed(), files).write(&dir)?;
    Ok(dir)
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use kagome_gibbs::analysis::{mean_triangle_zz, mixing_time, ObservableSeries, PairTable, SeriesMeta};
use kagome_gibbs::channel::{run_ensemble_observed, EnsembleOptions, EnsembleResult};
use kagome_gibbs::operators::SpinModel;
use kagome_gibbs::oracle::{
    exact_spectrum, fidelity_with, Fidelity, GibbsApprox, SpectralData, SpectrumCache, SpectrumMode,
};

use crate::config::{ExperimentConfig, FidelityConfig};
use crate::output::{num, run_dir, RunManifest, Table};
use crate::{CliError, CliResult};

pub struct RunOutput {
    pub dir: PathBuf,
    pub report: String,
    pub energy_per_site: f64,
    pub energy_per_site_se: f64,
    pub report_cycle: usize,
}

pub fn rescaled(cycle: usize, cfg: &ExperimentConfig, n_sys: usize) -> f64 {
    cycle as f64 * cfg.channel.n_env as f64 / n_sys as f64
}

pub fn low_energy_spectrum(
    cfg: &ExperimentConfig,
    model: &SpinModel,
    cutoff: f64,
    beta: f64,
    out: &Path,
) -> CliResult<SpectralData> {
    let model_text = toml::to_string(&cfg.model).expect("model serializes");
    let material = format!("{model_text}\nlow_energy cutoff={cutoff} beta={beta}");
    let cache = SpectrumCache::new(out.join("cache"));
    Ok(cache.get_or_compute(&material, || {
        exact_spectrum(&model.hamiltonian, model.n_sites, SpectrumMode::LowEnergy { cutoff, beta })
    })?)
}

struct FidelityTrack {
    every: usize,
    last: usize,
    rows: Vec<(usize, Fidelity)>,
    error: Option<kagome_gibbs::Error>,
}

fn ensemble(
    cfg: &ExperimentConfig,
    model: &SpinModel,
    workers: usize,
    out: &Path,
) -> CliResult<(EnsembleResult, Vec<(usize, Fidelity)>)> {
    let opts = EnsembleOptions {
        n_traj: cfg.run.n_traj,
        n_resets: cfg.run.n_resets,
        initial: cfg.run.initial.clone(),
        master_seed: cfg.channel.seed,
        workers,
        retain_final_states: false,
    };
    let Some(FidelityConfig { cutoff, every, .. }) = cfg.fidelity else {
        let result = run_ensemble_observed(&cfg.channel, model, &opts, None::<fn(usize, &[_])>)?;
        return Ok((result, Vec::new()));
    };
    let spec = low_energy_spectrum(cfg, model, cutoff, cfg.channel.beta, out)?;
    let gibbs = GibbsApprox::new(&spec, cfg.channel.beta, cutoff)?;
    let mut track = FidelityTrack { every, last: cfg.run.n_resets, rows: Vec::new(), error: None };
    let result = run_ensemble_observed(
        &cfg.channel,
        model,
        &opts,
        Some(|cycle: usize, states: &[Vec<_>]| {
            if track.error.is_some() || (cycle % track.every != 0 && cycle != track.last) {
                return;
            }
            match fidelity_with(states, &spec, &gibbs) {
                Ok(f) => track.rows.push((cycle, f)),
                Err(e) => track.error = Some(e),
            }
        }),
    )?;
    if let Some(e) = track.error {
        return Err(e.into());
    }
    Ok((result, track.rows))
}

pub fn execute(cfg: &ExperimentConfig, out: &Path, workers: usize) -> CliResult<RunOutput> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let model = cfg.model.build()?;
    let n = model.n_sites;
    let dir = run_dir(out, cfg)?;
    let (result, fid) = ensemble(cfg, &model, workers, out)?;
    let mut files = Vec::new();

    if cfg.run.write_trajectories {
        let mut header: Vec<String> =
            ["traj", "seed", "cycle", "energy", "m_z", "m_x", "env_ones"].map(String::from).into();
        header.extend((0..n).map(|i| format!("z_{i}")));
        header.extend(result.bonds.iter().map(|(a, b)| format!("zz_{a}_{b}")));
        let mut t = Table::create(&dir, "trajectories.csv", &header)?;
        for rec in &result.records {
            for r in &rec.rows {
                let mut row = vec![
                    rec.index.to_string(),
                    rec.seed.to_string(),
                    r.cycle.to_string(),
                    num(r.energy),
                    num(r.m_z),
                    num(r.m_x),
                    r.env_ones.to_string(),
                ];
                row.extend(r.z.iter().chain(&r.zz).map(|&v| num(v)));
                t.row(row)?;
            }
        }
        files.push(t.finish()?);
    }

    let mut t = Table::create(
        &dir,
        "summary.csv",
        &[
            "cycle",
            "rescaled",
            "energy",
            "energy_se",
            "energy_per_site",
            "energy_per_site_se",
            "m_z",
            "m_z_se",
            "m_x",
            "m_x_se",
            "env_ones",
            "triangle_zz",
        ],
    )?;
    for s in &result.stats {
        let tri = if model.triangles.is_empty() {
            String::new()
        } else {
            let pairs = PairTable::from_bonds(&result.bonds, &s.zz)?;
            num(mean_triangle_zz(&s.z, &pairs, &model.triangles).mean)
        };
        t.row([
            s.cycle.to_string(),
            num(rescaled(s.cycle, cfg, n)),
            num(s.energy),
            num(s.energy_se),
            num(s.energy / n as f64),
            num(s.energy_se / n as f64),
            num(s.m_z),
            num(s.m_z_se),
            num(s.m_x),
            num(s.m_x_se),
            num(s.env_ones),
            tri,
        ])?;
    }
    files.push(t.finish()?);

    let report_cycle = cfg.run.report_cycle.unwrap_or(cfg.run.n_resets);
    let steady = &result.stats[report_cycle];
    let (e, se) = (steady.energy / n as f64, steady.energy_se / n as f64);
    let mut report = String::new();
    writeln!(report, "run {} ({})", cfg.name, cfg.hash()).unwrap();
    writeln!(
        report,
        "model {} with {n} sites, {} environment qubits, beta {}, {} trajectories",
        model.name,
        cfg.channel.n_env,
        num(cfg.channel.beta),
        cfg.run.n_traj
    )
    .unwrap();
    writeln!(
        report,
        "energy per site at cycle {report_cycle} (rescaled {:.3}): {e:.4} +/- {se:.4}",
        rescaled(report_cycle, cfg, n)
    )
    .unwrap();

    if !fid.is_empty() {
        let mut t = Table::create(
            &dir,
            "fidelity.csv",
            &["cycle", "rescaled", "F", "stderr", "overlap", "sample_purity", "gibbs_purity"],
        )?;
        for (c, f) in &fid {
            t.row([
                c.to_string(),
                num(rescaled(*c, cfg, n)),
                num(f.value),
                num(f.stderr),
                num(f.overlap),
                num(f.sample_purity),
                num(f.gibbs_purity),
            ])?;
        }
        files.push(t.finish()?);
        let series = fidelity_series(&fid, cfg, n)?;
        let (c, last) = fid.last().expect("non-empty");
        writeln!(report, "fidelity at cycle {c}: {:.4} +/- {:.4}", last.value, last.stderr).unwrap();
        for &thr in &cfg.fidelity.as_ref().expect("fidelity section").thresholds {
            let m = mixing_time(&series, thr, cfg.channel.n_env, n)?;
            if m.open_upper {
                writeln!(report, "mixing time F > {thr}: not reached").unwrap();
            } else {
                writeln!(report, "mixing time F > {thr}: {:.3} in [{:.3}, {:.3}]", m.tau, m.lower, m.upper).unwrap();
            }
        }
    }
    std::fs::write(dir.join("report.txt"), &report)?;
    files.push("report.txt".into());
    RunManifest::new("run", cfg, started, clock.elapsed(), files).write(&dir)?;
    Ok(RunOutput { dir, report, energy_per_site: e, energy_per_site_se: se, report_cycle })
}

pub fn fidelity_series(fid: &[(usize, Fidelity)], cfg: &ExperimentConfig, n: usize) -> CliResult<ObservableSeries> {
    let meta = SeriesMeta { n_sys: n, n_env: cfg.channel.n_env, beta: cfg.channel.beta, model: cfg.name.clone() };
    Ok(ObservableSeries::new(
        fid.iter().map(|(c, _)| *c as f64).collect(),
        fid.iter().map(|(_, f)| f.value).collect(),
        fid.iter().map(|(_, f)| f.stderr).collect(),
        meta,
    )?)
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path, workers: usize) -> CliResult<PathBuf> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("no sweep section or --param/--values".into()))?;
    if sweep.values.is_empty() {
        return Err(CliError::Config("sweep has no values".into()));
    }
    let variants = sweep.values.iter().map(|v| cfg.with_param(sweep.param, v.0)).collect::<CliResult<Vec<_>>>()?;
    let dir = run_dir(out, cfg)?;
    let mut t = Table::create(
        &dir,
        "sweep.csv",
        &[sweep.param.to_string().as_str(), "report_cycle", "rescaled", "energy_per_site", "energy_per_site_se", "run"],
    )?;
    for (value, variant) in sweep.values.iter().zip(&variants) {
        let r = execute(variant, out, workers)?;
        let n = variant.model.build()?.n_sites;
        let rel = r.dir.strip_prefix(out).unwrap_or(&r.dir).to_string_lossy().into_owned();
        t.row([
            value.to_string(),
            r.report_cycle.to_string(),
            num(rescaled(r.report_cycle, variant, n)),
            num(r.energy_per_site),
            num(r.energy_per_site_se),
            rel,
        ])?;
        eprintln!("{} = {value}: {:.4} +/- {:.4}", sweep.param, r.energy_per_site, r.energy_per_site_se);
    }
    let files = vec![t.finish()?];
    RunManifest::new("sweep", cfg, started, clock.elapsed(), files).write(&dir)?;
    Ok(dir)
}

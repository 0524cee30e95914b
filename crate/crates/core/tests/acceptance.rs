//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `KGIBBS_ACCEPTANCE=1,6,8` restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kagome_gibbs::analysis::{
    beta_max, beta_max_asymptotic, mixing_time, o1_for_beta_max, reset_beta_star, zne_fit, ObservableSeries,
    SeriesMeta, ZneModel, ZnePoint,
};
use kagome_gibbs::channel::{
    filter_values, mean_se, run_ensemble, run_ensemble_observed, ChannelConfig, EnsembleOptions, EnsembleResult,
    NoiseSpec, TrotterOrder,
};
use kagome_gibbs::hexcompile::{
    cycle_depth, embed_kagome, optimize_orientations, schedule_trotter_step, OVERLAP_DEPTH,
};
use kagome_gibbs::lattice::{build_kagome, KagomeLattice, KagomeSpec};
use kagome_gibbs::linalg::check_blas;
use kagome_gibbs::operators::{
    build_afim_chain, build_tfim_chain, Axis, HamiltonianTerms, InitialKind, JumpFamily, JumpOperator, PauliString,
    SpinModel, TermGroup,
};
use kagome_gibbs::oracle::{
    channel_superoperator, exact_spectrum, fidelity_lowrank, fidelity_with, real_operator_element, sample_purity,
    total_spin_squared, trace_distance, GibbsApprox, SpectrumMode, SuperopOptions,
};
use kagome_gibbs::statevec::StateVector;
use kagome_gibbs::Error;

type Check = Result<(bool, String), Error>;

const INF: f64 = f64::INFINITY;

// Criterion 1
const TABLE1: [(f64, f64); 3] = [(INF, -1.05), (0.5, -0.84), (0.25, -0.62)];
const TABLE1_TOL: f64 = 0.03;
const TABLE1_TRAJ: usize = 1000;
const TABLE1_RESCALED_CYCLE: usize = 7;

// Criterion 2
const FID_TRAJ: usize = 200;
const FID_EVERY: usize = 3;
const FID_CUTOFF: f64 = 8.0;

// Criterion 3
const COLLAPSE_SIGMAS: f64 = 2.0;
const COLLAPSE_RESCALED: usize = 3;

// Criterion 4
const P1_VALUES: [f64; 4] = [0.5e-3, 1e-3, 2e-3, 4e-3];
const P1_R2: f64 = 0.95;
const NE_VALUES: [usize; 3] = [2, 4, 8];
const NE_P1: f64 = 2e-3;
const NE_R2: f64 = 0.9;
const TFIM_TRAJ: usize = 150;
const TFIM_RESETS_AT_NE4: usize = 60;

// Criterion 6
const FID_ORACLE_TOL: f64 = 1e-6;
const PURITY_TOL: f64 = 1e-9;

// Criterion 7
const SELECTION_TOL: f64 = 1e-10;
const SINGLET_MIN: f64 = 1e-3;

// Criterion 8
const OVERLAP_EXPECTED: [u32; 9] = [12, 15, 17, 15, 15, 18, 17, 18, 24];
const CYCLE_DEPTH: u32 = 55;
const CYCLE_DEPTH_TOL: u32 = 4;

// Criterion 9
const BETA_STAR_TOL: f64 = 1e-6;
const ASYMPTOTIC_REL: f64 = 0.01;
const ROUND_TRIP_BETA: f64 = 1.25;

fn main() -> ExitCode {
    let only: Option<BTreeSet<usize>> =
        std::env::var("KGIBBS_ACCEPTANCE").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    if let Err(e) = check_blas() {
        println!("FAIL linear algebra self-test: {e}");
        return ExitCode::FAILURE;
    }
    let checks: [(usize, &str, fn() -> Check); 10] = [
        (1, "steady-state energy, AFIM N_S=12 open", table1_energy),
        (2, "fidelity convergence and mixing-time peak", fidelity_convergence),
        (3, "environment-count rescaling collapse", env_collapse),
        (4, "depolarizing-noise scaling, TFIM chain", depolarizing_scaling),
        (5, "superoperator steady-state bound", superoperator_bound),
        (6, "low-rank fidelity against dense oracle", fidelity_oracle),
        (7, "connectivity selection rules, AFHM N_S=12", connectivity_symmetry),
        (8, "compiler gate counts and depths", compiler_numbers),
        (9, "effective reset temperature solver", beta_star_solver),
        (10, "property suites", property_suites),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match std::panic::catch_unwind(check) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        failed += usize::from(!ok);
        println!(
            "{} criterion {id} ({name}): {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn afim_12(boundary_open: bool) -> Result<(KagomeLattice, SpinModel), Error> {
    let spec = if boundary_open { KagomeSpec::open(2, 2) } else { KagomeSpec::periodic(2, 2) };
    let lat = build_kagome(&spec)?;
    let model = SpinModel::kagome_afim(&lat, 0.5, 2.0);
    Ok((lat, model))
}

fn channel(alpha: f64, t_total: f64, dt: f64, sigma: f64, beta: f64, n_env: usize, seed: u64) -> ChannelConfig {
    ChannelConfig {
        alpha,
        t_total,
        dt,
        sigma,
        omega_max: 8.0,
        beta,
        n_env,
        jump_family: JumpFamily::SinglePauliOnly,
        trotter: TrotterOrder::SecondOrder,
        noise: NoiseSpec::default(),
        seed,
    }
}

fn table1_channel(beta: f64, n_env: usize, seed: u64) -> ChannelConfig {
    channel(1.75, 0.75, 0.25, INF, beta, n_env, seed)
}

fn options(n_traj: usize, n_resets: usize, master_seed: u64) -> EnsembleOptions {
    EnsembleOptions {
        n_traj,
        n_resets,
        initial: InitialKind::RandomProduct,
        master_seed,
        workers: 0,
        retain_final_states: false,
    }
}

fn table1_energy() -> Check {
    let (_, model) = afim_12(true)?;
    let cycle = TABLE1_RESCALED_CYCLE * model.n_sites;
    let mut ok = true;
    let mut parts = Vec::new();
    for (beta, target) in TABLE1 {
        let cfg = table1_channel(beta, 1, 20250101);
        let res = run_ensemble(&cfg, &model, &options(TABLE1_TRAJ, cycle, cfg.seed))?;
        let s = &res.stats[cycle];
        let (e, se) = (s.energy / model.n_sites as f64, s.energy_se / model.n_sites as f64);
        ok &= (e - target).abs() <= TABLE1_TOL;
        parts.push(format!("beta {beta}: {e:.3} +/- {se:.3} (want {target} +/- {TABLE1_TOL})"));
    }
    Ok((ok, parts.join("; ")))
}

fn fidelity_convergence() -> Check {
    let (_, model) = afim_12(false)?;
    let n = model.n_sites;
    let spec = exact_spectrum(&model.hamiltonian, n, SpectrumMode::LowEnergy { cutoff: FID_CUTOFF, beta: 1.4 })?;
    let run = |beta: f64, n_resets: usize| -> Result<ObservableSeries, Error> {
        let gibbs = GibbsApprox::new(&spec, beta, FID_CUTOFF)?;
        let cfg = channel(1.0, 8.0, 0.1, 0.25, beta, 1, 11);
        let mut points: Vec<(f64, f64, f64)> = Vec::new();
        let mut failure = None;
        run_ensemble_observed(
            &cfg,
            &model,
            &options(FID_TRAJ, n_resets, cfg.seed),
            Some(|c: usize, states: &[Vec<Complex64>]| {
                if c % FID_EVERY == 0 {
                    match fidelity_with(states, &spec, &gibbs) {
                        Ok(f) => points.push((c as f64, f.value, f.stderr)),
                        Err(e) => failure = Some(e),
                    }
                }
            }),
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        let meta = SeriesMeta { n_sys: n, n_env: 1, beta, model: "afim".into() };
        ObservableSeries::new(
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
            points.iter().map(|p| p.2).collect(),
            meta,
        )
    };
    let cold = run(3.0, 15 * n)?;
    let peak = cold.mean.iter().copied().fold(f64::MIN, f64::max);
    let t05 = mixing_time(&cold, 0.5, 1, n)?;
    let warm = run(2.0, 25 * n)?;
    let hot = run(1.4, 25 * n)?;
    let t2 = mixing_time(&warm, 0.8, 1, n)?;
    let t14 = mixing_time(&hot, 0.8, 1, n)?;
    let ok = peak > 0.5 && t2.tau.is_finite() && t14.tau > t2.tau;
    Ok((
        ok,
        format!(
            "beta 3: max F {peak:.3}, tau(0.5) {:.2}; tau(0.8) at beta 2 = {:.2} [{:.2}, {:.2}], at beta 1.4 = {:.2} [{:.2}, {:.2}]",
            t05.tau, t2.tau, t2.lower, t2.upper, t14.tau, t14.lower, t14.upper
        ),
    ))
}

fn env_collapse() -> Check {
    let (_, model) = afim_12(true)?;
    let n = model.n_sites;
    let runs = [(1usize, 400usize), (4, 100), (12, 40)];
    let mut series = Vec::new();
    for (ne, n_traj) in runs {
        let cfg = table1_channel(3.0, ne, 7);
        let res = run_ensemble(&cfg, &model, &options(n_traj, COLLAPSE_RESCALED * n / ne, cfg.seed))?;
        let meta = SeriesMeta { n_sys: n, n_env: ne, beta: 3.0, model: "afim".into() };
        let raw = ObservableSeries::energy_per_site(&res.stats, meta)?;
        series.push(kagome_gibbs::analysis::rescale_series(&raw, ne, n));
    }
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for a in 0..series.len() {
        for b in a + 1..series.len() {
            for x in 1..=COLLAPSE_RESCALED {
                let (ma, sa) = series[a].interpolate(x as f64).expect("grid point");
                let (mb, sb) = series[b].interpolate(x as f64).expect("grid point");
                worst = worst.max((ma - mb).abs() / (sa * sa + sb * sb).sqrt());
                compared += 1;
            }
        }
    }
    let at = |s: &ObservableSeries| {
        (1..=COLLAPSE_RESCALED)
            .map(|x| format!("{:.3}", s.interpolate(x as f64).unwrap().0))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok((
        worst <= COLLAPSE_SIGMAS,
        format!(
            "N_E 1/4/12 at rescaled 1..{COLLAPSE_RESCALED}: [{}] [{}] [{}]; worst |z| {worst:.2} over {compared} pairs",
            at(&series[0]),
            at(&series[1]),
            at(&series[2])
        ),
    ))
}

/// Per-trajectory energy per site averaged over the second half of the run.
fn tail_energies(res: &EnsembleResult) -> Vec<f64> {
    res.records
        .iter()
        .map(|r| {
            let last = r.rows.len() - 1;
            let tail = &r.rows[last / 2..];
            tail.iter().map(|row| row.energy).sum::<f64>() / tail.len() as f64 / res.n_sys as f64
        })
        .collect()
}

fn r_squared(y: &[f64], fit: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = y.iter().zip(fit).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn depolarizing_scaling() -> Check {
    let n = 8;
    let model = SpinModel::chain("tfim", n, false, build_tfim_chain(n, 1.0, 1.5, false));
    let tfim = |ne: usize, p1: f64| -> Result<Vec<f64>, Error> {
        let mut cfg = channel(1.0, 4.0, 0.25, 0.25, INF, ne, 3);
        cfg.noise.local_depolarizing_rate = p1;
        let resets = TFIM_RESETS_AT_NE4 * 4 / ne;
        Ok(tail_energies(&run_ensemble(&cfg, &model, &options(TFIM_TRAJ, resets, cfg.seed))?))
    };

    let clean = tfim(4, 0.0)?;
    let mut dev = Vec::new();
    for p1 in P1_VALUES {
        let noisy = tfim(4, p1)?;
        dev.push(mean_se(noisy.iter().zip(&clean).map(|(a, b)| a - b)));
    }
    let slope =
        P1_VALUES.iter().zip(&dev).map(|(x, d)| x * d.0).sum::<f64>() / P1_VALUES.iter().map(|x| x * x).sum::<f64>();
    let y: Vec<f64> = dev.iter().map(|d| d.0).collect();
    let fit: Vec<f64> = P1_VALUES.iter().map(|x| slope * x).collect();
    let r2_p = r_squared(&y, &fit);

    let ground = exact_spectrum(&model.hamiltonian, n, SpectrumMode::Dense)?.ground_energy() / n as f64;
    let mut err = Vec::new();
    for ne in NE_VALUES {
        let (e, se) = mean_se(tfim(ne, NE_P1)?);
        err.push((e - ground, se));
    }
    let inv: Vec<f64> = NE_VALUES.iter().map(|&k| 1.0 / k as f64).collect();
    let (mx, my) = (inv.iter().sum::<f64>() / 3.0, err.iter().map(|e| e.0).sum::<f64>() / 3.0);
    let c0 = inv.iter().zip(&err).map(|(x, e)| (x - mx) * (e.0 - my)).sum::<f64>()
        / inv.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let c1 = my - c0 * mx;
    let ey: Vec<f64> = err.iter().map(|e| e.0).collect();
    let r2_n = r_squared(&ey, &inv.iter().map(|x| c0 * x + c1).collect::<Vec<_>>());
    let monotone = err.windows(2).all(|w| w[1].0 < w[0].0);

    let ok = r2_p > P1_R2 && slope > 0.0 && monotone && c0 > 0.0 && r2_n > NE_R2;
    let fmt = |v: &[(f64, f64)]| v.iter().map(|(m, s)| format!("{m:.4}({s:.4})")).collect::<Vec<_>>().join(" ");
    Ok((
        ok,
        format!(
            "dE vs p1 [{}], slope {slope:.2}, R2 {r2_p:.3}; error vs N_E 2/4/8 [{}] against E0/N {ground:.5}, c0 {c0:.3}, c1 {c1:.3}, R2 {r2_n:.3}",
            fmt(&dev),
            fmt(&err)
        ),
    ))
}

fn superoperator_bound() -> Check {
    let model = SpinModel::chain("afim", 3, false, build_afim_chain(3, 0.5, 2.0, false));
    let cfg = channel(1.0, 8.0, 0.1, 0.25, 2.0, 1, 5);
    let s = channel_superoperator(&cfg, &model, &SuperopOptions::default())?;
    let d = s.dim;
    let mixed: Vec<Complex64> =
        (0..d * d).map(|k| Complex64::new(if k / d == k % d { 1.0 / d as f64 } else { 0.0 }, 0.0)).collect();
    let spread = trace_distance(&mixed, &s.steady_state, d)?;
    let mut ok = true;
    let mut parts = vec![format!("gap {:.4} +/- {:.4}", s.gap, s.gap_stderr)];
    for p in [1e-3, 1e-2] {
        let noisy = s.depolarized(p)?;
        let lhs = trace_distance(&noisy.steady_state, &s.steady_state, d)?;
        let rhs = p / s.gap * spread;
        ok &= lhs <= rhs;
        parts.push(format!("p {p}: {lhs:.3e} <= {rhs:.3e}"));
    }
    Ok((ok, parts.join("; ")))
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Complex64> {
    let v: Vec<Complex64> =
        (0..dim).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

fn fidelity_oracle() -> Check {
    let n = 6;
    let (beta, cutoff) = (1.0, 8.0);
    let h = build_afim_chain(n, 0.5, 2.0, false);
    let spec = exact_spectrum(&h, n, SpectrumMode::Dense)?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let states: Vec<Vec<Complex64>> = (0..40)
        .map(|_| {
            let noise = random_state(&mut rng, d);
            let mut v: Vec<Complex64> = noise.iter().map(|z| z * 0.3).collect();
            for k in 0..6 {
                let a = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                for (x, e) in v.iter_mut().zip(spec.vector(k)) {
                    *x += a * e;
                }
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| z / norm).collect()
        })
        .collect();
    let low = fidelity_lowrank(&states, &spec, beta, cutoff)?;

    let e0 = spec.energies[0];
    let kept: Vec<usize> = (0..spec.len()).filter(|&i| spec.energies[i] - e0 < cutoff / beta).collect();
    let z: f64 = kept.iter().map(|&i| (-beta * (spec.energies[i] - e0)).exp()).sum();
    let mut gibbs = vec![0.0; d * d];
    for &i in &kept {
        let w = (-beta * (spec.energies[i] - e0)).exp() / z;
        let v = spec.vector(i);
        for a in 0..d {
            for b in 0..d {
                gibbs[a * d + b] += w * v[a] * v[b];
            }
        }
    }
    let j = states.len() as f64;
    let mut rho = vec![Complex64::new(0.0, 0.0); d * d];
    for s in &states {
        for a in 0..d {
            for b in 0..d {
                rho[a * d + b] += s[a] * s[b].conj() / j;
            }
        }
    }
    let overlap: f64 =
        (0..d).flat_map(|a| (0..d).map(move |b| (a, b))).map(|(a, b)| gibbs[a * d + b] * rho[b * d + a].re).sum();
    let gibbs_purity: f64 = gibbs.iter().map(|x| x * x).sum();
    let raw: f64 = rho.iter().map(|z| z.norm_sqr()).sum();
    let sample = (j * j * raw - j) / (j * j - j);
    let dense = overlap / gibbs_purity.max(sample);

    let pure = random_state(&mut rng, d);
    let purity = sample_purity(&vec![pure; 25])?;
    let ok = (low.value - dense).abs() < FID_ORACLE_TOL && (purity - 1.0).abs() < PURITY_TOL;
    Ok((
        ok,
        format!(
            "low-rank {:.9} vs dense {dense:.9} (|diff| {:.1e}); identical-sample purity {purity:.12}",
            low.value,
            (low.value - dense).abs()
        ),
    ))
}

fn connectivity_symmetry() -> Check {
    let lat = build_kagome(&KagomeSpec::periodic(2, 2))?;
    let model = SpinModel::kagome_afhm(&lat);
    let n = model.n_sites;
    let mut spec = exact_spectrum(&model.hamiltonian, n, SpectrumMode::LowEnergy { cutoff: 2.0, beta: 1.0 })?;
    let s2 = spec.resolve_degeneracies(&total_spin_squared(n))?;
    let singlets: Vec<usize> = (0..spec.len()).filter(|&i| s2[i].abs() < 1e-6).take(2).collect();
    if singlets.len() < 2 {
        return Ok((false, format!("only {} singlet(s) in the computed window", singlets.len())));
    }
    let (u, v) = (spec.vector(singlets[0]), spec.vector(singlets[1]));
    let element = |op: JumpOperator| {
        let mut h = HamiltonianTerms::new();
        for p in op.strings() {
            h.push(TermGroup::classify(&p), p);
        }
        real_operator_element(u, v, &h).norm()
    };
    let single = (0..n)
        .flat_map(|site| Axis::ALL.map(|axis| JumpOperator::SinglePauli { site, axis }))
        .map(element)
        .fold(0.0, f64::max);
    let pair = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| JumpOperator::SingletPair { i, j }))
        .map(element)
        .fold(0.0, f64::max);
    Ok((
        single < SELECTION_TOL && pair > SINGLET_MIN,
        format!(
            "singlets at E = {:.6}, {:.6}; max single-Pauli {single:.1e}, max singlet-pair {pair:.3e}",
            spec.energies[singlets[0]], spec.energies[singlets[1]]
        ),
    ))
}

fn compiler_numbers() -> Check {
    let table: Vec<u32> = OVERLAP_DEPTH.iter().flatten().copied().collect();
    let mut ok = table == OVERLAP_EXPECTED;
    let mut parts = vec![format!("overlap table {table:?}")];
    for (lx, ly) in [(2, 2), (3, 2), (3, 3)] {
        let lat = build_kagome(&KagomeSpec::periodic(lx, ly))?;
        let (_, emb) = embed_kagome(&lat, 1)?;
        let orient = optimize_orientations(&lat, &emb)?;
        let step = schedule_trotter_step(&lat, &emb, &orient.orientations)?;
        ok &= step.zz_gates == 22 * lat.n_sites / 3 && step.zz_depth == 17;
        parts.push(format!("N_S {}: {} gates, depth {}", lat.n_sites, step.zz_gates, step.zz_depth));
    }
    let mut device = KagomeSpec::open(9, 3);
    device.removed_sites = [0, 80].into();
    for (spec, n_env) in [(KagomeSpec::periodic(2, 2), 12), (device, 60)] {
        let lat = build_kagome(&spec)?;
        let (_, emb) = embed_kagome(&lat, n_env)?;
        let orient = optimize_orientations(&lat, &emb)?;
        let cycle = cycle_depth(&lat, &emb, &orient.orientations, 3)?;
        ok &= cycle.depth.abs_diff(CYCLE_DEPTH) <= CYCLE_DEPTH_TOL;
        parts.push(format!(
            "N_S {} N_E {n_env}: 3-step depth {} (explicit layering {})",
            lat.n_sites, cycle.depth, cycle.depth_scheduled
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn beta_star_solver() -> Check {
    let omega = 8.0;
    let identity = [[1.0, 0.0], [0.0, 1.0]];
    let mut worst_perfect: f64 = 0.0;
    for beta in [0.05, 0.25, 0.5, 1.0, 1.25, 2.0, 3.0, 5.0, 10.0] {
        let r = reset_beta_star(identity, [1.0, 0.0], beta, omega)?;
        worst_perfect = worst_perfect.max((r.beta_star - beta).abs());
    }
    let mut worst_asym: f64 = 0.0;
    let mut checked = 0;
    for k in 2..=48 {
        let o1 = 10f64.powf(-k as f64 / 4.0);
        let b = beta_max(o1, omega)?;
        if b * omega > 20.0 {
            worst_asym = worst_asym.max((b - beta_max_asymptotic(o1, omega)).abs() / b);
            checked += 1;
        }
    }
    let o1 = o1_for_beta_max(ROUND_TRIP_BETA, omega);
    let back = beta_max(o1, omega)?;
    let via_reset = reset_beta_star([[1.0 - o1, 1.0 - o1], [o1, o1]], [1.0, 0.0], INF, omega)?.beta_star;
    let ok = worst_perfect < BETA_STAR_TOL
        && checked > 0
        && worst_asym < ASYMPTOTIC_REL
        && (back - ROUND_TRIP_BETA).abs() < BETA_STAR_TOL
        && (via_reset - ROUND_TRIP_BETA).abs() < BETA_STAR_TOL;
    Ok((
        ok,
        format!(
            "perfect reset |beta* - beta| <= {worst_perfect:.1e}; asymptote within {:.3}% over {checked} points; O1 {o1:.6} -> beta_max {back:.9}, reset beta* {via_reset:.9}",
            100.0 * worst_asym
        ),
    ))
}

fn run_property<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn pauli(n: usize) -> impl Strategy<Value = PauliString> {
    let axis = prop_oneof![Just(Axis::X), Just(Axis::Y), Just(Axis::Z)];
    (-2.0..2.0f64, prop::collection::btree_map(0..n, axis, 1..=n)).prop_map(|(c, f)| PauliString::new(c, f))
}

fn property_suites() -> Check {
    let results = [
        run_property(
            "norm",
            64,
            (any::<u64>(), prop::collection::vec((pauli(6), -3.0..3.0f64), 1..16)),
            |(seed, ops)| {
                let mut s = StateVector::random(6, &mut ChaCha8Rng::seed_from_u64(seed));
                for (p, angle) in &ops {
                    s.apply_pauli_exp(p, *angle).unwrap();
                }
                prop_assert!((s.norm() - 1.0).abs() < 1e-12);
                Ok(())
            },
        ),
        run_property("hermiticity", 64, (any::<u64>(), prop::collection::vec(pauli(5), 1..10)), |(seed, terms)| {
            let mut h = HamiltonianTerms::new();
            for p in terms {
                h.push(TermGroup::classify(&p), p);
            }
            let s = StateVector::random(5, &mut ChaCha8Rng::seed_from_u64(seed));
            let hv = s.apply_hamiltonian(&h).unwrap();
            let e: Complex64 = s.amplitudes().iter().zip(&hv).map(|(a, b)| a.conj() * b).sum();
            prop_assert!(e.im.abs() < 1e-10);
            Ok(())
        }),
        run_property(
            "filter normalization",
            128,
            (1..400usize, 0.01..0.5f64, prop_oneof![Just(INF), 0.05..2.0f64]),
            |(steps, dt, sigma)| {
                let f = filter_values(steps as f64 * dt, dt, sigma).unwrap();
                let total: f64 = f.iter().map(|x| dt * x * x).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                Ok(())
            },
        ),
        run_property("deterministic replay", 4, (any::<u64>(), 0.0..0.05f64), |(seed, rate)| {
            let model = SpinModel::chain("tfim", 4, false, build_tfim_chain(4, 1.0, 1.5, false));
            let mut cfg = channel(1.0, 1.0, 0.25, 0.5, 1.0, 2, seed);
            cfg.noise.local_depolarizing_rate = rate;
            let opts = |workers| EnsembleOptions { workers, ..options(6, 4, seed) };
            let a = run_ensemble(&cfg, &model, &opts(1)).unwrap();
            let b = run_ensemble(&cfg, &model, &opts(2)).unwrap();
            prop_assert_eq!(a.stats, b.stats);
            Ok(())
        }),
        run_property("ZNE recovery", 128, (prop_oneof![-2.0..-0.05f64, 0.05..2.0f64], 0.01..1.0f64), |(o, lambda)| {
            let points: Vec<ZnePoint> = [0.0, 0.25, 0.5, 1.0]
                .iter()
                .map(|&p| ZnePoint { p, value: o * (-lambda * (1.0 + 2.0 * p)).exp(), stderr: 1e-4 })
                .collect();
            let fit = zne_fit(&points, ZneModel::Exponential).unwrap();
            prop_assert!((fit.value - o).abs() < 1e-8 * o.abs().max(1.0));
            Ok(())
        }),
    ];
    let failures: Vec<String> = results.into_iter().filter_map(|r| r.err()).collect();
    Ok(if failures.is_empty() {
        (true, "norm, hermiticity, filter normalization, deterministic replay, ZNE recovery".into())
    } else {
        (false, failures.join("; "))
    })
}

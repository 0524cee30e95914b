//! The dissipative reset channel: environment preparation, filtered Trotter
//! evolution, measurement and reset, plus trajectory and ensemble drivers.

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{
    build_coupling, sample_initial_state, sample_jumps, Axis, EnvSpec, InitialKind, JumpFamily, JumpOperator,
    PauliMasks, SpinModel, TermGroup,
};
use crate::statevec::{apply_masks_exp_slice, masks_expectation, z_statistics, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TrotterOrder {
    #[default]
    SecondOrder,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub local_depolarizing_rate: f64,
    #[serde(default)]
    pub global_depolarizing_per_cycle: f64,
    /// Column-stochastic `[[c00, c01], [1 - c00, 1 - c01]]` per environment
    /// qubit. Empty means perfect reset; a single matrix applies to all.
    #[serde(default)]
    pub reset_confusion: Vec<[[f64; 2]; 2]>,
}

impl NoiseSpec {
    pub fn is_noiseless(&self) -> bool {
        self.local_depolarizing_rate == 0.0
            && self.global_depolarizing_per_cycle == 0.0
            && self.reset_confusion.is_empty()
    }

    fn confusion(&self, e: usize) -> Option<&[[f64; 2]; 2]> {
        match self.reset_confusion.len() {
            0 => None,
            1 => Some(&self.reset_confusion[0]),
            _ => self.reset_confusion.get(e),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_depolarizing_rate < 0.0 {
            return Err(Error::InvalidConfig("local depolarizing rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.global_depolarizing_per_cycle) {
            return Err(Error::InvalidConfig("global depolarizing probability must lie in [0, 1]".into()));
        }
        for m in &self.reset_confusion {
            for col in 0..2 {
                let (a, b) = (m[0][col], m[1][col]);
                if a < 0.0 || b < 0.0 || (a + b - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig("reset confusion columns must sum to one".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub alpha: f64,
    #[serde(rename = "T")]
    pub t_total: f64,
    pub dt: f64,
    /// Filter width in units of `T`; infinite means a constant filter.
    #[serde(with = "crate::extended")]
    pub sigma: f64,
    pub omega_max: f64,
    #[serde(with = "crate::extended")]
    pub beta: f64,
    pub n_env: usize,
    pub jump_family: JumpFamily,
    #[serde(default)]
    pub trotter: TrotterOrder,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

impl ChannelConfig {
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.t_total > 0.0) {
            return Err(Error::InvalidConfig("T and dt must be positive".into()));
        }
        let r = self.t_total / self.dt;
        let n = r.round();
        if n < 1.0 || (r - n).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::InvalidConfig(format!("T/dt = {r} is not a positive integer")));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.n_steps()?;
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidConfig("alpha must be non-negative".into()));
        }
        if !(self.omega_max > 0.0) {
            return Err(Error::InvalidConfig("omega_max must be positive".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidConfig("beta must be non-negative".into()));
        }
        if self.n_env == 0 {
            return Err(Error::InvalidConfig("at least one environment qubit is required".into()));
        }
        if let JumpFamily::MixedWithSinglets { singlet_weight: Some(w) } = self.jump_family {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidConfig("singlet weight must lie in [0, 1]".into()));
            }
        }
        self.noise.validate()
    }
}

/// Filter values at the step midpoints, normalized so that `Σ dt f² = 1`.
pub fn filter_values(t_total: f64, dt: f64, sigma: f64) -> Result<Vec<f64>> {
    let cfg_steps = ChannelConfig {
        alpha: 0.0,
        t_total,
        dt,
        sigma,
        omega_max: 1.0,
        beta: 0.0,
        n_env: 1,
        jump_family: JumpFamily::SinglePauliOnly,
        trotter: TrotterOrder::SecondOrder,
        noise: NoiseSpec::default(),
        seed: 0,
    }
    .n_steps()?;
    if sigma.is_infinite() {
        return Ok(vec![1.0 / t_total.sqrt(); cfg_steps]);
    }
    let raw: Vec<f64> = (0..cfg_steps)
        .map(|j| {
            let t = -t_total / 2.0 + (j as f64 + 0.5) * dt;
            (-t * t / (4.0 * sigma * sigma * t_total * t_total)).exp()
        })
        .collect();
    let norm = (dt * raw.iter().map(|f| f * f).sum::<f64>()).sqrt();
    Ok(raw.into_iter().map(|f| f / norm).collect())
}

/// Probability that an environment qubit of splitting `omega` starts in |1>.
pub fn excitation_probability(beta: f64, omega: f64) -> f64 {
    if beta.is_infinite() {
        return 0.0;
    }
    let x = beta * omega;
    if x > 700.0 {
        0.0
    } else {
        1.0 / (1.0 + x.exp())
    }
}

pub fn sample_environment<R: Rng + ?Sized>(rng: &mut R, beta: f64, env: &EnvSpec) -> Vec<bool> {
    env.bohr_frequencies.iter().map(|&w| rng.random::<f64>() < excitation_probability(beta, w)).collect()
}

/// Everything drawn at the start of one reset cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSetup {
    pub env: EnvSpec,
    pub jumps: Vec<JumpOperator>,
    pub env_bits: Vec<bool>,
}

pub fn sample_cycle_setup<R: Rng + ?Sized>(rng: &mut R, cfg: &ChannelConfig, n_sys: usize) -> CycleSetup {
    let n_env = cfg.n_env;
    let bohr_frequencies = (0..n_env).map(|_| cfg.omega_max * (1.0 - rng.random::<f64>())).collect();
    let pairing = if n_env == n_sys { (0..n_sys).collect() } else { sample_indices(rng, n_sys, n_env).into_vec() };
    let env = EnvSpec { bohr_frequencies, pairing };
    let jumps = sample_jumps(rng, cfg.jump_family, &env, n_sys);
    let env_bits = sample_environment(rng, cfg.beta, &env);
    CycleSetup { env, jumps, env_bits }
}

/// Precomputed per-(config, model) data for fast cycles.
#[derive(Debug, Clone)]
pub struct ChannelEngine {
    pub cfg: ChannelConfig,
    pub n_sys: usize,
    pub n_env: usize,
    pub filter: Vec<f64>,
    sys_diag: Vec<f64>,
    sys_phase: Vec<Complex64>,
    sx_terms: Vec<(PauliMasks, f64)>,
    sx_commuting: bool,
    bonds: Vec<(usize, usize)>,
}

/// Observables recorded after every cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleObservables {
    pub cycle: usize,
    pub energy: f64,
    pub m_z: f64,
    pub m_x: f64,
    pub z: Vec<f64>,
    pub zz: Vec<f64>,
    /// Environment qubits measured in |1> during this cycle.
    pub env_ones: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub seed: u64,
    pub rows: Vec<CycleObservables>,
    #[serde(skip)]
    pub final_state: Option<Vec<Complex64>>,
}

impl ChannelEngine {
    pub fn new(cfg: &ChannelConfig, model: &SpinModel) -> Result<Self> {
        cfg.validate()?;
        let n_sys = model.n_sites;
        if cfg.n_env > n_sys {
            return Err(Error::InvalidConfig(format!("n_env = {} exceeds the {} system sites", cfg.n_env, n_sys)));
        }
        let filter = filter_values(cfg.t_total, cfg.dt, cfg.sigma)?;
        let mut diag_terms = Vec::new();
        let mut sx_terms = Vec::new();
        for (g, p) in &model.hamiltonian.terms {
            p.check_range(n_sys)?;
            if matches!(g, TermGroup::E | TermGroup::SE) {
                return Err(Error::InvalidOperator("system model holds environment terms".into()));
            }
            if p.is_diagonal() {
                diag_terms.push((p.masks(), p.coeff));
            } else {
                sx_terms.push((p.masks(), p.coeff));
            }
        }
        let dim = 1usize << n_sys;
        let mut sys_diag = vec![0.0; dim];
        for (m, c) in &diag_terms {
            for (x, d) in sys_diag.iter_mut().enumerate() {
                *d += if (x & m.phase).count_ones() & 1 == 0 { *c } else { -*c };
            }
        }
        let sys_phase = sys_diag.iter().map(|&d| Complex64::from_polar(1.0, -cfg.dt * d)).collect();
        let sx_commuting = all_commute(&sx_terms);
        Ok(ChannelEngine {
            cfg: cfg.clone(),
            n_sys,
            n_env: cfg.n_env,
            filter,
            sys_diag,
            sys_phase,
            sx_terms,
            sx_commuting,
            bonds: model.bonds.clone(),
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_sys + self.n_env
    }

    /// Diagonal part of `H_S` on each system basis state.
    pub fn system_diagonal(&self) -> &[f64] {
        &self.sys_diag
    }

    fn coupling_terms(&self, setup: &CycleSetup) -> Result<Vec<(PauliMasks, f64)>> {
        let h = build_coupling(&setup.env, &setup.jumps, self.n_sys)?;
        Ok(h.strings().map(|p| (p.masks(), p.coeff)).collect())
    }

    fn env_phase(&self, setup: &CycleSetup) -> Vec<Complex64> {
        // exp(-i dt H_E) with H_E = -Σ ω Z / 2.
        (0..1usize << self.n_env)
            .map(|y| {
                let e: f64 = setup
                    .env
                    .bohr_frequencies
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| if y >> k & 1 == 0 { -w / 2.0 } else { w / 2.0 })
                    .sum();
                Complex64::from_polar(1.0, -self.cfg.dt * e)
            })
            .collect()
    }

    /// Joint evolution `U(T)` for one cycle. Local depolarizing Paulis are
    /// drawn from `noise_rng` after every step when the rate is positive.
    pub fn evolve<R: Rng + ?Sized>(
        &self,
        state: &mut StateVector,
        setup: &CycleSetup,
        noise_rng: Option<&mut R>,
    ) -> Result<()> {
        if state.n_qubits() != self.n_qubits() {
            return Err(Error::DimensionMismatch { expected: self.n_qubits(), got: state.n_qubits() });
        }
        let se = self.coupling_terms(setup)?;
        let env_phase = self.env_phase(setup);
        let noisy = self.cfg.noise.local_depolarizing_rate > 0.0 && noise_rng.is_some();
        if !noisy && self.sx_commuting && all_commute(&se) {
            self.evolve_merged(state, &se, &env_phase);
            Ok(())
        } else {
            self.evolve_stepwise(state, &se, &env_phase, noise_rng)
        }
    }

    fn evolve_stepwise<R: Rng + ?Sized>(
        &self,
        state: &mut StateVector,
        se: &[(PauliMasks, f64)],
        env_phase: &[Complex64],
        mut noise_rng: Option<&mut R>,
    ) -> Result<()> {
        let dt = self.cfg.dt;
        let p_flip = self.cfg.noise.local_depolarizing_rate * dt / 3.0;
        let chunk = 1usize << self.n_sys;
        for &f in &self.filter {
            let a = self.cfg.alpha * f * dt / 2.0;
            if a != 0.0 {
                for &(m, c) in se {
                    state.apply_masks_exp(m, a * c);
                }
            }
            for (block, ep) in state.amplitudes_mut().chunks_exact_mut(chunk).zip(env_phase) {
                for &(m, c) in &self.sx_terms {
                    apply_masks_exp_slice(block, m, c * dt / 2.0);
                }
                for (amp, sp) in block.iter_mut().zip(&self.sys_phase) {
                    *amp *= sp * ep;
                }
                for &(m, c) in self.sx_terms.iter().rev() {
                    apply_masks_exp_slice(block, m, c * dt / 2.0);
                }
            }
            if a != 0.0 {
                for &(m, c) in se.iter().rev() {
                    state.apply_masks_exp(m, a * c);
                }
            }
            if p_flip > 0.0 {
                if let Some(rng) = noise_rng.as_deref_mut() {
                    for q in 0..self.n_qubits() {
                        let u: f64 = rng.random();
                        if u < 3.0 * p_flip {
                            state.apply_pauli(q, Axis::ALL[((u / p_flip) as usize).min(2)])?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Same product formula as the step-by-step loop, regrouped: adjacent
    /// coupling half-steps merge, and transverse terms commuting with the
    /// coupling fold across step boundaries. Needs mutually commuting groups.
    fn evolve_merged(&self, state: &mut StateVector, se: &[(PauliMasks, f64)], env_phase: &[Complex64]) {
        let dt = self.cfg.dt;
        let h = dt / 2.0;
        let (free, bound): (Vec<_>, Vec<_>) =
            self.sx_terms.iter().partition(|(m, _)| se.iter().all(|(s, _)| m.commutes_with(s)));
        let a: Vec<f64> = self.filter.iter().map(|f| self.cfg.alpha * f * dt / 2.0).collect();
        let n = a.len();
        let chunk = 1usize << self.n_sys;
        for k in 0..n {
            let angle = if k == 0 { a[0] } else { a[k - 1] + a[k] };
            apply_coupling(state, se, angle);
            let lead = if k == 0 { h } else { dt };
            for (block, ep) in state.amplitudes_mut().chunks_exact_mut(chunk).zip(env_phase) {
                apply_group(block, &bound, h);
                apply_group(block, &free, lead);
                for (amp, sp) in block.iter_mut().zip(&self.sys_phase) {
                    *amp *= sp * ep;
                }
                if k + 1 == n {
                    apply_group(block, &free, h);
                }
                apply_group(block, &bound, h);
            }
        }
        apply_coupling(state, se, a[n - 1]);
    }

    /// One full reset cycle. Returns the measured environment outcomes.
    pub fn run_cycle(
        &self,
        state: &mut StateVector,
        channel_rng: &mut ChaCha8Rng,
        noise_rng: &mut ChaCha8Rng,
    ) -> Result<Vec<bool>> {
        let setup = sample_cycle_setup(channel_rng, &self.cfg, self.n_sys);
        for (e, &b) in setup.env_bits.iter().enumerate() {
            if b {
                state.apply_pauli(self.n_sys + e, Axis::X)?;
            }
        }
        self.evolve(state, &setup, Some(noise_rng))?;
        let env_qubits: Vec<usize> = (self.n_sys..self.n_qubits()).collect();
        let outcomes = state.measure_and_reset(&env_qubits, channel_rng)?;
        for (e, &b) in outcomes.iter().enumerate() {
            if let Some(m) = self.cfg.noise.confusion(e) {
                if noise_rng.random::<f64>() < m[1][b as usize] {
                    state.apply_pauli(self.n_sys + e, Axis::X)?;
                }
            }
        }
        let p = self.cfg.noise.global_depolarizing_per_cycle;
        if p > 0.0 && noise_rng.random::<f64>() < p {
            let x = noise_rng.random_range(0..1usize << self.n_sys);
            let env = env_index(state, self.n_sys);
            *state = StateVector::basis(self.n_qubits(), x | env << self.n_sys);
        }
        Ok(outcomes)
    }

    pub fn observables(&self, state: &StateVector, cycle: usize, env_ones: u32) -> Result<CycleObservables> {
        let probs = state.marginal_probs(self.n_sys);
        let (z, zz) = z_statistics(&probs, self.n_sys, &self.bonds);
        let mut energy: f64 = probs.iter().zip(&self.sys_diag).map(|(p, d)| p * d).sum();
        let x = state.x_expectations(self.n_sys);
        for &(m, c) in &self.sx_terms {
            if m.phase == 0 && m.flip.count_ones() == 1 {
                energy += c * x[m.flip.trailing_zeros() as usize];
            } else {
                energy += c * masks_expectation(state.amplitudes(), m).re;
            }
        }
        let n = self.n_sys as f64;
        Ok(CycleObservables {
            cycle,
            energy,
            m_z: z.iter().sum::<f64>() / n,
            m_x: x.iter().sum::<f64>() / n,
            z,
            zz,
            env_ones,
        })
    }
}

fn all_commute(terms: &[(PauliMasks, f64)]) -> bool {
    terms.iter().enumerate().all(|(i, (a, _))| terms[..i].iter().all(|(b, _)| a.commutes_with(b)))
}

fn apply_coupling(state: &mut StateVector, se: &[(PauliMasks, f64)], angle: f64) {
    if angle != 0.0 {
        for &(m, c) in se {
            state.apply_masks_exp(m, angle * c);
        }
    }
}

fn apply_group(block: &mut [Complex64], terms: &[&(PauliMasks, f64)], t: f64) {
    for &&(m, c) in terms {
        apply_masks_exp_slice(block, m, c * t);
    }
}

/// Environment basis index of a state whose environment register is a product
/// basis state (true right after reset).
fn env_index(state: &StateVector, n_sys: usize) -> usize {
    let chunk = 1usize << n_sys;
    state.amplitudes().chunks_exact(chunk).position(|b| b.iter().any(|a| a.norm_sqr() > 0.0)).unwrap_or(0)
}

/// System amplitudes of a state whose environment register is a basis state.
pub fn system_state(state: &StateVector, n_sys: usize) -> Vec<Complex64> {
    let chunk = 1usize << n_sys;
    let e = env_index(state, n_sys);
    state.amplitudes()[e * chunk..(e + 1) * chunk].to_vec()
}

/// SplitMix64 finalizer mixing a master seed with a trajectory index.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Trajectory {
    index: usize,
    seed: u64,
    state: StateVector,
    channel_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    rows: Vec<CycleObservables>,
}

impl Trajectory {
    fn start(
        engine: &ChannelEngine,
        model: &SpinModel,
        initial: &InitialKind,
        seed: u64,
        index: usize,
    ) -> Result<Self> {
        let channel_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(1);
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(2);
        let init = sample_initial_state(&mut init_rng, initial, model)?;
        let state = StateVector::from_initial(&init, engine.n_sys, engine.n_env)?;
        let rows = vec![engine.observables(&state, 0, 0)?];
        Ok(Trajectory { index, seed, state, channel_rng, noise_rng, rows })
    }

    fn advance(&mut self, engine: &ChannelEngine) -> Result<()> {
        let out = engine.run_cycle(&mut self.state, &mut self.channel_rng, &mut self.noise_rng)?;
        let ones = out.iter().filter(|&&b| b).count() as u32;
        let row = engine.observables(&self.state, self.rows.len(), ones)?;
        self.rows.push(row);
        Ok(())
    }

    fn finish(self, n_sys: usize, retain: bool) -> TrajectoryRecord {
        TrajectoryRecord {
            index: self.index,
            seed: self.seed,
            final_state: retain.then(|| system_state(&self.state, n_sys)),
            rows: self.rows,
        }
    }
}

fn wrap(index: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Trajectory { index, source: Box::new(e) }
}

pub fn run_trajectory(
    cfg: &ChannelConfig,
    model: &SpinModel,
    n_resets: usize,
    initial: &InitialKind,
    rng_seed: u64,
) -> Result<TrajectoryRecord> {
    let engine = ChannelEngine::new(cfg, model)?;
    run_trajectory_with(&engine, model, n_resets, initial, rng_seed, 0, true)
}

fn run_trajectory_with(
    engine: &ChannelEngine,
    model: &SpinModel,
    n_resets: usize,
    initial: &InitialKind,
    seed: u64,
    index: usize,
    retain: bool,
) -> Result<TrajectoryRecord> {
    let mut t = Trajectory::start(engine, model, initial, seed, index)?;
    for _ in 0..n_resets {
        t.advance(engine)?;
    }
    Ok(t.finish(engine.n_sys, retain))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub n_traj: usize,
    pub n_resets: usize,
    pub initial: InitialKind,
    pub master_seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub retain_final_states: bool,
}

/// Per-cycle mean and standard error over trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycle: usize,
    pub energy: f64,
    pub energy_se: f64,
    pub m_z: f64,
    pub m_z_se: f64,
    pub m_x: f64,
    pub m_x_se: f64,
    pub z: Vec<f64>,
    pub zz: Vec<f64>,
    pub env_ones: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub n_sys: usize,
    pub n_env: usize,
    pub bonds: Vec<(usize, usize)>,
    pub stats: Vec<CycleStats>,
    pub records: Vec<TrajectoryRecord>,
}

pub fn mean_se(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.into_iter().collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(records: &[TrajectoryRecord]) -> Vec<CycleStats> {
    let Some(first) = records.first() else { return Vec::new() };
    let n = records.len() as f64;
    (0..first.rows.len())
        .map(|c| {
            let rows: Vec<&CycleObservables> = records.iter().map(|r| &r.rows[c]).collect();
            let (energy, energy_se) = mean_se(rows.iter().map(|r| r.energy));
            let (m_z, m_z_se) = mean_se(rows.iter().map(|r| r.m_z));
            let (m_x, m_x_se) = mean_se(rows.iter().map(|r| r.m_x));
            let avg = |f: &dyn Fn(&CycleObservables) -> &Vec<f64>| -> Vec<f64> {
                let mut acc = vec![0.0; f(rows[0]).len()];
                for r in &rows {
                    for (a, v) in acc.iter_mut().zip(f(r)) {
                        *a += v;
                    }
                }
                acc.iter().map(|a| a / n).collect()
            };
            CycleStats {
                cycle: c,
                energy,
                energy_se,
                m_z,
                m_z_se,
                m_x,
                m_x_se,
                z: avg(&|r| &r.z),
                zz: avg(&|r| &r.zz),
                env_ones: rows.iter().map(|r| r.env_ones as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs `n_traj` independent trajectories. Trajectory `i` is seeded with
/// `mix_seed(master_seed, i)`, so results do not depend on `workers`.
pub fn run_ensemble(cfg: &ChannelConfig, model: &SpinModel, opts: &EnsembleOptions) -> Result<EnsembleResult> {
    run_ensemble_observed(cfg, model, opts, None::<fn(usize, &[Vec<Complex64>])>)
}

/// As [`run_ensemble`]; when an observer is given the trajectories advance in
/// lockstep and it receives every system state after each cycle (cycle 0
/// included).
pub fn run_ensemble_observed<F>(
    cfg: &ChannelConfig,
    model: &SpinModel,
    opts: &EnsembleOptions,
    observer: Option<F>,
) -> Result<EnsembleResult>
where
    F: FnMut(usize, &[Vec<Complex64>]) + Send,
{
    let engine = ChannelEngine::new(cfg, model)?;
    let seeds: Vec<u64> = (0..opts.n_traj).map(|i| mix_seed(opts.master_seed, i as u64)).collect();
    let records = match observer {
        None => with_pool(opts.workers, || {
            seeds
                .par_iter()
                .enumerate()
                .map(|(i, &s)| {
                    run_trajectory_with(&engine, model, opts.n_resets, &opts.initial, s, i, opts.retain_final_states)
                        .map_err(wrap(i))
                })
                .collect::<Result<Vec<_>>>()
        })??,
        Some(mut obs) => with_pool(opts.workers, || -> Result<Vec<TrajectoryRecord>> {
            let mut trajs = seeds
                .par_iter()
                .enumerate()
                .map(|(i, &s)| Trajectory::start(&engine, model, &opts.initial, s, i).map_err(wrap(i)))
                .collect::<Result<Vec<_>>>()?;
            let snapshot = |trajs: &[Trajectory]| -> Vec<Vec<Complex64>> {
                trajs.par_iter().map(|t| system_state(&t.state, engine.n_sys)).collect()
            };
            obs(0, &snapshot(&trajs));
            for c in 1..=opts.n_resets {
                trajs.par_iter_mut().map(|t| t.advance(&engine).map_err(wrap(t.index))).collect::<Result<Vec<_>>>()?;
                obs(c, &snapshot(&trajs));
            }
            Ok(trajs.into_iter().map(|t| t.finish(engine.n_sys, opts.retain_final_states)).collect())
        })??,
    };
    Ok(EnsembleResult {
        n_sys: engine.n_sys,
        n_env: engine.n_env,
        bonds: model.bonds.clone(),
        stats: aggregate(&records),
        records,
    })
}

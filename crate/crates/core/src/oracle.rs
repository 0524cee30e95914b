//! Exact-diagonalization ground truth: spectra, truncated Gibbs states, the
//! low-rank mixed-state fidelity, jump connectivity, effective temperatures
//! and a small-system superoperator of the reset channel.

use std::fs;
use std::io::{Read, Write};
use std::path::PathBuf;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::channel::{excitation_probability, sample_cycle_setup, ChannelConfig, ChannelEngine};
use crate::error::{Error, Result};
use crate::linalg::{eig_general_rowmajor, eigh, eigvalsh, gemm_tn, trace_norm_hermitian, EigRange};
use crate::operators::{Axis, HamiltonianTerms, JumpOperator, PauliString, SpinModel, TermGroup};
use crate::statevec::StateVector;

/// Largest register handled by dense diagonalization.
pub const DENSE_QUBIT_LIMIT: usize = 14;
/// Default truncation parameter `c` of the low-rank Gibbs state.
pub const DEFAULT_CUTOFF: f64 = 8.0;
/// Energies closer than this are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

fn parity(x: usize) -> f64 {
    if x.count_ones() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Dense real matrix of `h` on `n` qubits (symmetric, so storage order is moot).
/// Fails for strings with an odd number of Y factors.
pub fn dense_hamiltonian(h: &HamiltonianTerms, n: usize) -> Result<Vec<f64>> {
    if n > DENSE_QUBIT_LIMIT {
        return Err(Error::InvalidConfig(format!("dense matrices are limited to {DENSE_QUBIT_LIMIT} qubits, got {n}")));
    }
    let dim = 1usize << n;
    let mut a = vec![0.0; dim * dim];
    for p in h.strings() {
        p.check_range(n)?;
        let m = p.masks();
        if m.n_y % 2 == 1 {
            return Err(Error::InvalidOperator(format!("string `{p}` has a complex matrix")));
        }
        let c = if m.n_y % 4 == 2 { -p.coeff } else { p.coeff };
        for x in 0..dim {
            a[x * dim + (x ^ m.flip)] += c * parity(x & m.phase);
        }
    }
    Ok(a)
}

/// `<u|P|v>` for real vectors, coefficient included.
pub fn real_matrix_element(u: &[f64], v: &[f64], p: &PauliString) -> Complex64 {
    let m = p.masks();
    let mut acc = 0.0;
    for (x, &vx) in v.iter().enumerate() {
        acc += u[x ^ m.flip] * vx * parity(x & m.phase);
    }
    let ph = match m.n_y % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    };
    ph * acc * p.coeff
}

/// `<u|H|v>` summed over all strings of `h`.
pub fn real_operator_element(u: &[f64], v: &[f64], h: &HamiltonianTerms) -> Complex64 {
    h.strings().map(|p| real_matrix_element(u, v, p)).sum()
}

/// Total spin `S·S` with spin-1/2 operators `S = σ/2`.
pub fn total_spin_squared(n: usize) -> HamiltonianTerms {
    let mut h = HamiltonianTerms::new();
    h.push(TermGroup::SZ, PauliString::identity(0.75 * n as f64));
    for i in 0..n {
        for j in i + 1..n {
            for ax in Axis::ALL {
                h.push(
                    TermGroup::classify(&PauliString::new(0.5, [(i, ax), (j, ax)])),
                    PauliString::new(0.5, [(i, ax), (j, ax)]),
                );
            }
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumMode {
    /// Every eigenpair.
    Dense,
    /// All states with `E - E0 < cutoff / beta`.
    LowEnergy { cutoff: f64, beta: f64 },
}

/// Ascending eigenpairs of a real Hamiltonian. Eigenvector `j` occupies
/// `vectors[j * dim..(j + 1) * dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub n_qubits: usize,
    pub energies: Vec<f64>,
    pub vectors: Vec<f64>,
    pub truncation_cutoff: f64,
    pub beta_reference: f64,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.len() == self.dim()
    }

    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors[j * d..(j + 1) * d]
    }

    /// Energy span above `E0` guaranteed to be fully resolved.
    pub fn window(&self) -> f64 {
        if self.is_complete() {
            f64::INFINITY
        } else {
            self.truncation_cutoff / self.beta_reference
        }
    }

    /// Largest `‖H v - E v‖` over the stored pairs.
    pub fn max_residual(&self, h: &HamiltonianTerms) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (j, &e) in self.energies.iter().enumerate() {
            let v = StateVector::from_amplitudes(self.vector(j).iter().map(|&x| Complex64::new(x, 0.0)).collect())?;
            let hv = v.apply_hamiltonian(h)?;
            let r: f64 = hv.iter().zip(v.amplitudes()).map(|(a, b)| (a - b * e).norm_sqr()).sum();
            worst = worst.max(r.sqrt());
        }
        Ok(worst)
    }

    /// Re-diagonalizes `op` inside every degenerate cluster so the stored basis
    /// is also an eigenbasis of `op` there. Returns the eigenvalues of `op`.
    pub fn resolve_degeneracies(&mut self, op: &HamiltonianTerms) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut labels = vec![0.0; self.len()];
        let mut start = 0;
        while start < self.len() {
            let mut end = start + 1;
            while end < self.len() && self.energies[end] - self.energies[end - 1] < DEGENERACY_TOL {
                end += 1;
            }
            let m = end - start;
            let mut block = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    block[a * m + b] = real_operator_element(self.vector(start + a), self.vector(start + b), op).re;
                }
            }
            let eig = eigh(block, m, EigRange::All)?;
            let old: Vec<f64> = self.vectors[start * d..end * d].to_vec();
            for k in 0..m {
                let q = eig.vector(k);
                let dst = &mut self.vectors[(start + k) * d..(start + k + 1) * d];
                dst.iter_mut().for_each(|x| *x = 0.0);
                for (a, &qa) in q.iter().enumerate() {
                    for (x, o) in dst.iter_mut().zip(&old[a * d..(a + 1) * d]) {
                        *x += qa * o;
                    }
                }
                labels[start + k] = eig.values[k];
            }
            start = end;
        }
        Ok(labels)
    }
}

pub fn exact_spectrum(h: &HamiltonianTerms, n_qubits: usize, mode: SpectrumMode) -> Result<SpectralData> {
    let a = dense_hamiltonian(h, n_qubits)?;
    let dim = 1usize << n_qubits;
    match mode {
        SpectrumMode::Dense => {
            let e = eigh(a, dim, EigRange::All)?;
            Ok(SpectralData {
                n_qubits,
                energies: e.values,
                vectors: e.vectors,
                truncation_cutoff: f64::INFINITY,
                beta_reference: 0.0,
            })
        }
        SpectrumMode::LowEnergy { cutoff, beta } => {
            if !(cutoff > 0.0) || !(beta >= 0.0) {
                return Err(Error::InvalidConfig("cutoff must be positive and beta non-negative".into()));
            }
            if beta == 0.0 {
                return exact_spectrum(h, n_qubits, SpectrumMode::Dense);
            }
            let (e0, _) = lanczos_ground(h, n_qubits, 1e-11, 2000, 0x5eed)?;
            let span = if beta.is_infinite() { DEGENERACY_TOL } else { cutoff / beta };
            let pad = 1e-7 * (1.0 + e0.abs());
            let e = eigh(a, dim, EigRange::Window(e0 - pad, e0 + span))?;
            if e.values.is_empty() || (e.values[0] - e0).abs() > 1e-6 * (1.0 + e0.abs()) {
                return Err(Error::NoConvergence(format!(
                    "Lanczos ground energy {e0} disagrees with windowed solver {:?}",
                    e.values.first()
                )));
            }
            // Drop anything the padding admitted past the requested span.
            let e_min = e.values[0];
            let keep = e.values.iter().take_while(|&&v| v - e_min < span).count().max(1);
            let mut vectors = e.vectors;
            vectors.truncate(keep * dim);
            let mut energies = e.values;
            energies.truncate(keep);
            Ok(SpectralData { n_qubits, energies, vectors, truncation_cutoff: cutoff, beta_reference: beta })
        }
    }
}

/// Matrix-free Lanczos estimate of the ground energy and state. The Krylov
/// basis is regenerated rather than stored, so memory stays at a few vectors.
pub fn lanczos_ground(
    h: &HamiltonianTerms,
    n_qubits: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(f64, Vec<Complex64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = StateVector::random(n_qubits, &mut rng);
    let dim = 1usize << n_qubits;
    let max_iter = max_iter.min(dim);

    let recurrence =
        |steps: usize, mut visit: Box<dyn FnMut(usize, &[Complex64]) + '_>| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut alphas = Vec::new();
            let mut betas = Vec::new();
            let mut prev = vec![Complex64::new(0.0, 0.0); dim];
            let mut cur = start.amplitudes().to_vec();
            let mut last_beta = 0.0;
            for k in 0..steps {
                visit(k, &cur);
                let hv = apply(h, n_qubits, &cur)?;
                let alpha: f64 = cur.iter().zip(&hv).map(|(a, b)| (a.conj() * b).re).sum();
                let mut next: Vec<Complex64> =
                    hv.iter().zip(&cur).zip(&prev).map(|((x, c), p)| x - c * alpha - p * last_beta).collect();
                let beta = next.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                alphas.push(alpha);
                if beta < 1e-13 || k + 1 == steps {
                    break;
                }
                betas.push(beta);
                next.iter_mut().for_each(|z| *z /= beta);
                prev = std::mem::replace(&mut cur, next);
                last_beta = beta;
            }
            Ok((alphas, betas))
        };

    // First pass: grow the Krylov space until the lowest Ritz value settles.
    let mut steps = 20.min(max_iter);
    let mut last = f64::INFINITY;
    let (ritz, y) = loop {
        let (alphas, betas) = recurrence(steps, Box::new(|_, _| {}))?;
        let m = alphas.len();
        let mut t = vec![0.0; m * m];
        for i in 0..m {
            t[i * m + i] = alphas[i];
            if i + 1 < m {
                t[i * m + i + 1] = betas[i];
                t[(i + 1) * m + i] = betas[i];
            }
        }
        let e = eigh(t, m, EigRange::Lowest(1))?;
        let ritz = e.values[0];
        let exhausted = m < steps || steps >= max_iter;
        if (ritz - last).abs() < tol * (1.0 + ritz.abs()) || exhausted {
            break (ritz, e.vectors);
        }
        last = ritz;
        steps = (steps * 2).min(max_iter);
    };

    // Second pass: rebuild the Ritz vector from the same recurrence.
    let mut v = vec![Complex64::new(0.0, 0.0); dim];
    recurrence(
        y.len(),
        Box::new(|k, q: &[Complex64]| {
            for (a, b) in v.iter_mut().zip(q) {
                *a += b * y[k];
            }
        }),
    )?;
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= norm);
    let hv = apply(h, n_qubits, &v)?;
    let energy: f64 = v.iter().zip(&hv).map(|(a, b)| (a.conj() * b).re).sum();
    let resid = hv.iter().zip(&v).map(|(a, b)| (a - b * energy).norm_sqr()).sum::<f64>().sqrt();
    if resid > 1e-5 * (1.0 + energy.abs()) {
        return Err(Error::NoConvergence(format!("Lanczos residual {resid:e} after {} steps (Ritz {ritz})", y.len())));
    }
    Ok((energy, v))
}

fn apply(h: &HamiltonianTerms, n: usize, v: &[Complex64]) -> Result<Vec<Complex64>> {
    debug_assert_eq!(v.len(), 1 << n);
    StateVector::from_amplitudes(v.to_vec())?.apply_hamiltonian(h)
}

/// Truncated Boltzmann weights `e^{-βE_i}/Z_I` over the retained states.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsApprox {
    pub beta: f64,
    pub weights: Vec<f64>,
    /// `Z_I` measured relative to the ground energy, `Σ e^{-β(E_i - E0)}`.
    pub z_shifted: f64,
    /// Boltzmann weight of the heaviest state left out (an upper bound when the
    /// spectrum itself is truncated).
    pub heaviest_discarded: f64,
}

impl GibbsApprox {
    pub fn new(spec: &SpectralData, beta: f64, cutoff: f64) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::InvalidConfig("empty spectrum".into()));
        }
        if beta < 0.0 || beta.is_nan() {
            return Err(Error::InvalidConfig(format!("beta must be non-negative, got {beta}")));
        }
        let e0 = spec.ground_energy();
        let span = if beta.is_infinite() {
            DEGENERACY_TOL
        } else if beta == 0.0 {
            f64::INFINITY
        } else {
            cutoff / beta
        };
        if span > spec.window() * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "spectrum resolves {:.4} above the ground state but beta = {beta} with c = {cutoff} needs {span:.4}",
                spec.window()
            )));
        }
        let kept = spec.energies.iter().take_while(|&&e| e - e0 < span).count();
        let raw: Vec<f64> = spec.energies[..kept]
            .iter()
            .map(|&e| if beta.is_infinite() { 1.0 } else { (-beta * (e - e0)).exp() })
            .collect();
        let z: f64 = raw.iter().sum();
        let heaviest_discarded = if kept < spec.len() {
            (-beta * (spec.energies[kept] - e0)).exp() / z
        } else if spec.is_complete() {
            0.0
        } else {
            (-beta * span).exp() / z
        };
        Ok(GibbsApprox { beta, weights: raw.iter().map(|w| w / z).collect(), z_shifted: z, heaviest_discarded })
    }

    pub fn purity(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Dense density matrix, row-major.
    pub fn density_matrix(&self, spec: &SpectralData) -> Vec<Complex64> {
        let d = spec.dim();
        let mut rho = vec![Complex64::new(0.0, 0.0); d * d];
        for (i, &w) in self.weights.iter().enumerate() {
            let v = spec.vector(i);
            for a in 0..d {
                if v[a] == 0.0 {
                    continue;
                }
                for b in 0..d {
                    rho[a * d + b] += w * v[a] * v[b];
                }
            }
        }
        rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalValue {
    pub value: f64,
    pub heaviest_discarded: f64,
}

/// `Σ_i w_i <E_i|O|E_i>` over the truncated ensemble.
pub fn thermal_expectation(spec: &SpectralData, beta: f64, op: &HamiltonianTerms) -> Result<ThermalValue> {
    let g = GibbsApprox::new(spec, beta, spec.truncation_cutoff)?;
    let mut value = 0.0;
    for (i, &w) in g.weights.iter().enumerate() {
        let v = spec.vector(i);
        value += w * real_operator_element(v, v, op).re;
    }
    Ok(ThermalValue { value, heaviest_discarded: g.heaviest_discarded })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fidelity {
    pub value: f64,
    pub stderr: f64,
    /// `Tr(ρ̃ ρ)`.
    pub overlap: f64,
    pub gibbs_purity: f64,
    pub sample_purity: f64,
}

/// Splits complex column vectors into real and imaginary column-major blocks.
fn split_columns(states: &[Vec<Complex64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = Vec::with_capacity(dim * states.len());
    let mut im = Vec::with_capacity(dim * states.len());
    for s in states {
        re.extend(s.iter().map(|z| z.re));
        im.extend(s.iter().map(|z| z.im));
    }
    (re, im)
}

/// Bias-corrected purity `(Σ_jj' |<ψ_j|ψ_j'>|² - Σ_j |<ψ_j|ψ_j>|²)/(J² - J)`.
pub fn sample_purity(states: &[Vec<Complex64>]) -> Result<f64> {
    let j = states.len();
    if j < 2 {
        return Err(Error::InsufficientSamples(format!("purity correction needs at least 2 samples, got {j}")));
    }
    let dim = states[0].len();
    if let Some(bad) = states.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
    }
    let (re, im) = split_columns(states, dim);
    let rr = gemm_tn(&re, &re, dim, j, j)?;
    let ii = gemm_tn(&im, &im, dim, j, j)?;
    let ri = gemm_tn(&re, &im, dim, j, j)?;
    let mut total = 0.0;
    let mut diag = 0.0;
    for a in 0..j {
        for b in 0..j {
            let g_re = rr[b * j + a] + ii[b * j + a];
            let g_im = ri[b * j + a] - ri[a * j + b];
            let sq = g_re * g_re + g_im * g_im;
            total += sq;
            if a == b {
                diag += sq;
            }
        }
    }
    Ok((total - diag) / (j * j - j) as f64)
}

/// Low-rank mixed-state fidelity between the sampled ensemble and the
/// truncated Gibbs state with cutoff `c`.
pub fn fidelity_lowrank(states: &[Vec<Complex64>], spec: &SpectralData, beta: f64, cutoff: f64) -> Result<Fidelity> {
    let gibbs = GibbsApprox::new(spec, beta, cutoff)?;
    fidelity_with(states, spec, &gibbs)
}

pub fn fidelity_with(states: &[Vec<Complex64>], spec: &SpectralData, gibbs: &GibbsApprox) -> Result<Fidelity> {
    let j = states.len();
    let dim = spec.dim();
    if let Some(bad) = states.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
    }
    let sample_purity = sample_purity(states)?;
    let k = gibbs.len();
    let (re, im) = split_columns(states, dim);
    let basis = &spec.vectors[..k * dim];
    let o_re = gemm_tn(basis, &re, dim, k, j)?;
    let o_im = gemm_tn(basis, &im, dim, k, j)?;
    let per_sample: Vec<f64> = (0..j)
        .map(|s| {
            (0..k)
                .map(|i| {
                    let (a, b) = (o_re[s * k + i], o_im[s * k + i]);
                    gibbs.weights[i] * (a * a + b * b)
                })
                .sum()
        })
        .collect();
    let (overlap, sem) = crate::channel::mean_se(per_sample.iter().copied());
    let gibbs_purity = gibbs.purity();
    let den = gibbs_purity.max(sample_purity);
    Ok(Fidelity { value: overlap / den, stderr: sem / den, overlap, gibbs_purity, sample_purity })
}

/// Maximum `|<E_m|O|E_n>|` over a jump family for the lowest `k` states.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectivity {
    pub k: usize,
    /// Row-major `k x k`.
    pub values: Vec<f64>,
    pub argmax: Vec<Option<JumpOperator>>,
}

impl Connectivity {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.k + n]
    }
}

pub fn connectivity_matrix(spec: &SpectralData, k: usize, jumps: &[JumpOperator]) -> Result<Connectivity> {
    if k > spec.len() {
        return Err(Error::InvalidConfig(format!("asked for {k} states but only {} are stored", spec.len())));
    }
    let mut values = vec![0.0; k * k];
    let mut argmax = vec![None; k * k];
    for op in jumps {
        let mut h = HamiltonianTerms::new();
        for p in op.strings() {
            p.check_range(spec.n_qubits)?;
            h.push(TermGroup::classify(&p), p);
        }
        for m in 0..k {
            for n in 0..k {
                let v = real_operator_element(spec.vector(m), spec.vector(n), &h).norm();
                if v > values[m * k + n] {
                    values[m * k + n] = v;
                    argmax[m * k + n] = Some(*op);
                }
            }
        }
    }
    Ok(Connectivity { k, values, argmax })
}

/// Thermal energy `E(β)` of a complete spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCurve {
    energies: Vec<f64>,
}

impl EnergyCurve {
    pub fn new(mut energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::InvalidConfig("empty spectrum".into()));
        }
        energies.sort_by(f64::total_cmp);
        Ok(EnergyCurve { energies })
    }

    pub fn from_spectrum(spec: &SpectralData) -> Result<Self> {
        if !spec.is_complete() {
            return Err(Error::InvalidConfig("E(beta) near beta = 0 needs the complete spectrum".into()));
        }
        Self::new(spec.energies.clone())
    }

    /// Full spectrum of `h`, eigenvalues only.
    pub fn from_hamiltonian(h: &HamiltonianTerms, n: usize) -> Result<Self> {
        Self::new(eigvalsh(dense_hamiltonian(h, n)?, 1 << n, EigRange::All)?)
    }

    pub fn ground(&self) -> f64 {
        self.energies[0]
    }

    pub fn energy(&self, beta: f64) -> f64 {
        let e0 = self.ground();
        if beta.is_infinite() {
            return e0;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &e in &self.energies {
            let w = (-beta * (e - e0)).exp();
            num += w * e;
            den += w;
        }
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEff {
    pub beta: f64,
    /// Range from shifting the target by ∓ its error.
    pub lower: f64,
    pub upper: f64,
}

fn solve_beta(curve: &EnergyCurve, target: f64) -> Result<f64> {
    let (e0, e_inf) = (curve.ground(), curve.energy(0.0));
    let tol = 1e-12 * (1.0 + e_inf.abs());
    if (target - e_inf).abs() <= tol {
        return Ok(0.0);
    }
    if target > e_inf || target <= e0 {
        return Err(Error::OutOfRange { target, low: e0, high: e_inf });
    }
    let mut hi = 1.0;
    while curve.energy(hi) > target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::OutOfRange { target, low: e0, high: e_inf });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if curve.energy(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if curve.energy(lo) - curve.energy(hi) < 1e-10 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Inverse temperature whose exact thermal energy equals `target`.
pub fn beta_eff(curve: &EnergyCurve, target: f64, target_err: f64) -> Result<BetaEff> {
    let beta = solve_beta(curve, target)?;
    let clamp = |t: f64| {
        let t = t.min(curve.energy(0.0));
        if t <= curve.ground() {
            Ok(f64::INFINITY)
        } else {
            solve_beta(curve, t)
        }
    };
    let lower = clamp(target + target_err.abs())?;
    let upper = clamp(target - target_err.abs())?;
    Ok(BetaEff { beta, lower, upper })
}

/// Monte Carlo options for [`channel_superoperator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperopOptions {
    pub batch: usize,
    pub min_batches: usize,
    pub max_samples: usize,
    /// Stop once the gap's standard error falls below this fraction of the gap.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for SuperopOptions {
    fn default() -> Self {
        SuperopOptions { batch: 32, min_batches: 8, max_samples: 50_000, rel_tol: 0.05, seed: 7 }
    }
}

/// Channel averaged over Bohr-frequency, pairing and jump draws. Vectorization
/// is row-major: `vec(ρ)[a d + b] = ρ[a][b]`.
#[derive(Debug, Clone)]
pub struct Superoperator {
    pub dim: usize,
    pub matrix: Vec<Complex64>,
    pub gap: f64,
    pub gap_stderr: f64,
    pub steady_state: Vec<Complex64>,
    pub samples: usize,
}

/// Gap `1 - max_{k>0} |λ_k|` and trace-normalized fixed point.
pub fn superoperator_spectrum(matrix: &[Complex64], dim: usize) -> Result<(f64, Vec<Complex64>)> {
    let n = dim * dim;
    let eig = eig_general_rowmajor(matrix, n)?;
    let lead = (0..n)
        .min_by(|&a, &b| (eig.values[a] - 1.0).norm().total_cmp(&(eig.values[b] - 1.0).norm()))
        .ok_or_else(|| Error::InvalidConfig("empty superoperator".into()))?;
    let second = (0..n).filter(|&k| k != lead).map(|k| eig.values[k].norm()).fold(0.0, f64::max);
    let v = &eig.vectors[lead * n..(lead + 1) * n];
    let tr: Complex64 = (0..dim).map(|a| v[a * dim + a]).sum();
    let mut rho: Vec<Complex64> = v.iter().map(|z| z / tr).collect();
    for a in 0..dim {
        for b in a..dim {
            let h = 0.5 * (rho[a * dim + b] + rho[b * dim + a].conj());
            rho[a * dim + b] = h;
            rho[b * dim + a] = h.conj();
        }
    }
    Ok((1.0 - second, rho))
}

/// Exact superoperator of one cycle for a fixed draw, environment initial
/// states averaged with their thermal probabilities.
fn draw_superoperator(engine: &ChannelEngine, rng: &mut ChaCha8Rng, acc: &mut [Complex64]) -> Result<()> {
    let (ns, ne) = (engine.n_sys, engine.n_env);
    let d = 1usize << ns;
    let setup = sample_cycle_setup(rng, &engine.cfg, ns);
    let mut kraus = vec![Complex64::new(0.0, 0.0); d * d];
    for b in 0..1usize << ne {
        let pb: f64 = setup
            .env
            .bohr_frequencies
            .iter()
            .enumerate()
            .map(|(e, &w)| {
                let p1 = excitation_probability(engine.cfg.beta, w);
                if b >> e & 1 == 1 {
                    p1
                } else {
                    1.0 - p1
                }
            })
            .product();
        if pb == 0.0 {
            continue;
        }
        let columns: Vec<StateVector> = (0..d)
            .map(|s| {
                let mut st = StateVector::basis(ns + ne, s | b << ns);
                engine.evolve::<ChaCha8Rng>(&mut st, &setup, None).map(|_| st)
            })
            .collect::<Result<_>>()?;
        for m in 0..1usize << ne {
            for a in 0..d {
                for (s, col) in columns.iter().enumerate() {
                    kraus[a * d + s] = col.amplitudes()[a | m << ns];
                }
            }
            for a in 0..d {
                for bb in 0..d {
                    let row = (a * d + bb) * d * d;
                    for s in 0..d {
                        let k_as = kraus[a * d + s] * pb;
                        if k_as == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        for t in 0..d {
                            acc[row + s * d + t] += k_as * kraus[bb * d + t].conj();
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn channel_superoperator(cfg: &ChannelConfig, model: &SpinModel, opts: &SuperopOptions) -> Result<Superoperator> {
    if model.n_sites > 5 {
        return Err(Error::InvalidConfig(format!("superoperator limited to 5 system qubits, got {}", model.n_sites)));
    }
    let engine = ChannelEngine::new(cfg, model)?;
    let d = 1usize << model.n_sites;
    let n = d * d;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut batches: Vec<Vec<Complex64>> = Vec::new();
    let batch = opts.batch.max(1);
    loop {
        let mut acc = vec![Complex64::new(0.0, 0.0); n * n];
        for _ in 0..batch {
            draw_superoperator(&engine, &mut rng, &mut acc)?;
        }
        batches.push(acc);
        let samples = batches.len() * batch;
        if batches.len() < opts.min_batches.max(2) {
            continue;
        }
        let g = batches.len();
        let total: Vec<Complex64> = (0..n * n).map(|i| batches.iter().map(|b| b[i]).sum()).collect();
        let mean: Vec<Complex64> = total.iter().map(|z| z / samples as f64).collect();
        let (gap, steady_state) = superoperator_spectrum(&mean, d)?;
        // Jackknife over batches.
        let mut jack = Vec::with_capacity(g);
        for b in &batches {
            let loo: Vec<Complex64> = total.iter().zip(b).map(|(t, x)| (t - x) / (samples - batch) as f64).collect();
            jack.push(superoperator_spectrum(&loo, d)?.0);
        }
        let jm = jack.iter().sum::<f64>() / g as f64;
        let gap_stderr = ((g - 1) as f64 / g as f64 * jack.iter().map(|x| (x - jm).powi(2)).sum::<f64>()).sqrt();
        if gap_stderr <= opts.rel_tol * gap.abs() || (gap == 0.0 && gap_stderr == 0.0) {
            return Ok(Superoperator { dim: d, matrix: mean, gap, gap_stderr, steady_state, samples });
        }
        if samples >= opts.max_samples {
            return Err(Error::NoConvergence(format!(
                "superoperator gap {gap:.4e} ± {gap_stderr:.1e} after {samples} draws"
            )));
        }
    }
}

impl Superoperator {
    /// Composition with global depolarizing `(1-p)ρ + p 1/d`.
    pub fn depolarized(&self, p: f64) -> Result<Superoperator> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("depolarizing probability {p} outside [0, 1]")));
        }
        let d = self.dim;
        let n = d * d;
        let mut matrix: Vec<Complex64> = self.matrix.iter().map(|z| z * (1.0 - p)).collect();
        for a in 0..d {
            for s in 0..d {
                matrix[(a * d + a) * n + s * d + s] += p / d as f64;
            }
        }
        let (gap, steady_state) = superoperator_spectrum(&matrix, d)?;
        Ok(Superoperator { dim: d, matrix, gap, gap_stderr: self.gap_stderr, steady_state, samples: self.samples })
    }

    pub fn apply(&self, rho: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim * self.dim;
        (0..n).map(|r| (0..n).map(|c| self.matrix[r * n + c] * rho[c]).sum()).collect()
    }

    /// Deviation of `Σ_a S[(a,a),(s,t)]` from `δ_st`.
    pub fn trace_defect(&self) -> f64 {
        let d = self.dim;
        let n = d * d;
        let mut worst: f64 = 0.0;
        for s in 0..d {
            for t in 0..d {
                let sum: Complex64 = (0..d).map(|a| self.matrix[(a * d + a) * n + s * d + t]).sum();
                let want = if s == t { 1.0 } else { 0.0 };
                worst = worst.max((sum - want).norm());
            }
        }
        worst
    }
}

/// `‖a - b‖₁` for Hermitian row-major matrices.
pub fn trace_distance(a: &[Complex64], b: &[Complex64], dim: usize) -> Result<f64> {
    let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    trace_norm_hermitian(&diff, dim)
}

/// On-disk cache of spectra keyed by a SHA-256 of caller-supplied key material.
#[derive(Debug, Clone)]
pub struct SpectrumCache {
    dir: PathBuf,
}

const CACHE_MAGIC: &[u8; 8] = b"KGSPEC01";

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SpectrumCache { dir: dir.into() }
    }

    pub fn key(material: &str) -> String {
        hex::encode(Sha256::digest(material.as_bytes()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.spec"))
    }

    pub fn load(&self, key: &str) -> Result<Option<SpectralData>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        decode_spectrum(&bytes).map(Some)
    }

    pub fn store(&self, key: &str, spec: &SpectralData) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!("{key}.tmp"));
        fs::File::create(&tmp)?.write_all(&encode_spectrum(spec))?;
        fs::rename(tmp, self.path(key))?;
        Ok(())
    }

    pub fn get_or_compute(
        &self,
        material: &str,
        compute: impl FnOnce() -> Result<SpectralData>,
    ) -> Result<SpectralData> {
        let key = Self::key(material);
        if let Some(s) = self.load(&key)? {
            return Ok(s);
        }
        let s = compute()?;
        self.store(&key, &s)?;
        Ok(s)
    }
}

fn encode_spectrum(s: &SpectralData) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 8 * (s.energies.len() + s.vectors.len()));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(s.n_qubits as u64).to_le_bytes());
    out.extend_from_slice(&(s.energies.len() as u64).to_le_bytes());
    out.extend_from_slice(&s.truncation_cutoff.to_le_bytes());
    out.extend_from_slice(&s.beta_reference.to_le_bytes());
    for x in s.energies.iter().chain(&s.vectors) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode_spectrum(bytes: &[u8]) -> Result<SpectralData> {
    let bad = || Error::Parse("corrupt spectrum cache file".into());
    if bytes.len() < 40 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad());
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap() };
    let n_qubits = u64::from_le_bytes(word(0)) as usize;
    let count = u64::from_le_bytes(word(1)) as usize;
    let truncation_cutoff = f64::from_le_bytes(word(2));
    let beta_reference = f64::from_le_bytes(word(3));
    if n_qubits > DENSE_QUBIT_LIMIT {
        return Err(bad());
    }
    let dim = 1usize << n_qubits;
    let floats = count * (1 + dim);
    if bytes.len() != 40 + 8 * floats {
        return Err(bad());
    }
    let data: Vec<f64> = bytes[40..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(SpectralData {
        n_qubits,
        energies: data[..count].to_vec(),
        vectors: data[count..].to_vec(),
        truncation_cutoff,
        beta_reference,
    })
}

//! Dense statevector over system and environment qubits.
//!
//! Qubit `q` is bit `q` of the basis index (little-endian). System qubits come
//! first, environment qubits follow.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::operators::{Axis, HamiltonianTerms, InitialState, PauliMasks, PauliString};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

#[inline]
fn parity(x: usize) -> f64 {
    if x.count_ones() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn i_pow(n: u32) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => I,
        2 => Complex64::new(-1.0, 0.0),
        _ => -I,
    }
}

/// Calls `f(x, x | bit)` for every index pair differing in `bit` (a power of two).
#[inline]
fn for_pairs(len: usize, bit: usize, mut f: impl FnMut(usize, usize)) {
    let mut hi = 0;
    while hi < len {
        for x in hi..hi + bit {
            f(x, x | bit);
        }
        hi += bit << 1;
    }
}

impl StateVector {
    pub fn zero(n_qubits: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        StateVector { n_qubits, amps }
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[index] = Complex64::new(1.0, 0.0);
        StateVector { n_qubits, amps }
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        if !amps.len().is_power_of_two() {
            return Err(Error::DimensionMismatch { expected: amps.len().next_power_of_two(), got: amps.len() });
        }
        let n_qubits = amps.len().trailing_zeros() as usize;
        let mut s = StateVector { n_qubits, amps };
        let n = s.norm();
        if n < 1e-14 {
            return Err(Error::ZeroNormBranch { norm: n });
        }
        s.scale(1.0 / n);
        Ok(s)
    }

    /// System register in `init`, the remaining `n_env` qubits in |0>.
    pub fn from_initial(init: &InitialState, n_sys: usize, n_env: usize) -> Result<Self> {
        let n = n_sys + n_env;
        match init {
            InitialState::Product(bits) => {
                if bits.len() != n_sys {
                    return Err(Error::DimensionMismatch { expected: n_sys, got: bits.len() });
                }
                let idx = bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as usize) << i));
                Ok(Self::basis(n, idx))
            }
            InitialState::Singlets(pairs) => {
                let mut amps = vec![ZERO; 1 << n];
                let h = std::f64::consts::FRAC_1_SQRT_2;
                let k = pairs.len();
                for choice in 0..1usize << k {
                    let mut idx = 0;
                    let mut sign = 1.0;
                    for (p, &(a, b)) in pairs.iter().enumerate() {
                        if a >= n_sys || b >= n_sys {
                            return Err(Error::QubitOutOfRange { qubit: a.max(b), n_qubits: n_sys });
                        }
                        // |01> means site a up, site b down; second branch -|10>.
                        if choice >> p & 1 == 0 {
                            idx |= 1 << b;
                        } else {
                            idx |= 1 << a;
                            sign = -sign;
                        }
                    }
                    amps[idx] = Complex64::new(sign * h.powi(k as i32), 0.0);
                }
                Ok(StateVector { n_qubits: n, amps })
            }
        }
    }

    pub fn random<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Self {
        let amps: Vec<Complex64> = (0..1usize << n_qubits)
            .map(|_| {
                // Box-Muller Gaussians give a Haar-random direction.
                let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
                let r = (-2.0 * u1.ln()).sqrt();
                let t = std::f64::consts::TAU * u2;
                Complex64::new(r * t.cos(), r * t.sin())
            })
            .collect();
        Self::from_amplitudes(amps).expect("random state is nonzero")
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn scale(&mut self, s: f64) {
        for a in &mut self.amps {
            *a *= s;
        }
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    fn check(&self, p: &PauliString) -> Result<()> {
        p.check_range(self.n_qubits)
    }

    /// `|psi> <- exp(-i angle P) |psi>`; the coefficient of `p` is ignored.
    pub fn apply_pauli_exp(&mut self, p: &PauliString, angle: f64) -> Result<()> {
        self.check(p)?;
        if p.is_identity() {
            let ph = Complex64::from_polar(1.0, -angle);
            self.amps.iter_mut().for_each(|a| *a *= ph);
            return Ok(());
        }
        self.apply_masks_exp(p.masks(), angle);
        Ok(())
    }

    /// Kernel behind [`apply_pauli_exp`] for prevalidated masks.
    pub fn apply_masks_exp(&mut self, m: PauliMasks, angle: f64) {
        apply_masks_exp_slice(&mut self.amps, m, angle);
    }

    /// Multiplies amplitude `x` by `sys[x & (2^n_sys - 1)] * env[x >> n_sys]`.
    pub fn apply_diagonal_tables(&mut self, sys: &[Complex64], env: &[Complex64], n_sys: usize) {
        let chunk = 1usize << n_sys;
        assert_eq!(sys.len(), chunk);
        assert_eq!(env.len() * chunk, self.amps.len());
        for (block, e) in self.amps.chunks_exact_mut(chunk).zip(env) {
            for (a, s) in block.iter_mut().zip(sys) {
                *a *= s * e;
            }
        }
    }

    pub fn apply_pauli(&mut self, site: usize, axis: Axis) -> Result<()> {
        if site >= self.n_qubits {
            return Err(Error::QubitOutOfRange { qubit: site, n_qubits: self.n_qubits });
        }
        let bit = 1usize << site;
        let len = self.amps.len();
        let amps = &mut self.amps;
        match axis {
            Axis::X => for_pairs(len, bit, |x, y| amps.swap(x, y)),
            Axis::Y => for_pairs(len, bit, |x, y| {
                let (a0, a1) = (amps[x], amps[y]);
                amps[x] = -I * a1;
                amps[y] = I * a0;
            }),
            Axis::Z => for_pairs(len, bit, |_, y| amps[y] = -amps[y]),
        }
        Ok(())
    }

    /// `<psi|P|psi>` including the coefficient.
    pub fn expectation_pauli(&self, p: &PauliString) -> Result<Complex64> {
        self.check(p)?;
        Ok(masks_expectation(&self.amps, p.masks()) * p.coeff)
    }

    pub fn expectation(&self, h: &HamiltonianTerms) -> Result<f64> {
        let mut acc = ZERO;
        for p in h.strings() {
            acc += self.expectation_pauli(p)?;
        }
        if acc.im.abs() > 1e-10 {
            return Err(Error::NonHermitian(acc.im));
        }
        Ok(acc.re)
    }

    /// `H|psi>` as a raw amplitude vector.
    pub fn apply_hamiltonian(&self, h: &HamiltonianTerms) -> Result<Vec<Complex64>> {
        let mut out = vec![ZERO; self.amps.len()];
        for p in h.strings() {
            self.check(p)?;
            let m = p.masks();
            let ph = i_pow(m.n_y) * p.coeff;
            for (x, a) in self.amps.iter().enumerate() {
                out[x ^ m.flip] += ph * parity(x & m.phase) * a;
            }
        }
        Ok(out)
    }

    pub fn prob_one(&self, qubit: usize) -> f64 {
        let bit = 1usize << qubit;
        let mut p = 0.0;
        for_pairs(self.amps.len(), bit, |_, y| p += self.amps[y].norm_sqr());
        p
    }

    /// Projects `qubit` onto `outcome`, renormalizes, then moves it to |0>.
    pub fn collapse_and_reset(&mut self, qubit: usize, outcome: bool) -> Result<()> {
        let bit = 1usize << qubit;
        let p1 = self.prob_one(qubit);
        let p = if outcome { p1 } else { 1.0 - p1 };
        if p < 1e-14 {
            return Err(Error::ZeroNormBranch { norm: p.max(0.0).sqrt() });
        }
        let s = 1.0 / p.sqrt();
        let len = self.amps.len();
        let amps = &mut self.amps;
        for_pairs(len, bit, |x, y| {
            amps[x] = if outcome { amps[y] * s } else { amps[x] * s };
            amps[y] = ZERO;
        });
        Ok(())
    }

    /// Born-rule measurement of each listed qubit in turn, each reset to |0>.
    pub fn measure_and_reset<R: Rng + ?Sized>(&mut self, qubits: &[usize], rng: &mut R) -> Result<Vec<bool>> {
        for (i, q) in qubits.iter().enumerate() {
            if *q >= self.n_qubits {
                return Err(Error::QubitOutOfRange { qubit: *q, n_qubits: self.n_qubits });
            }
            if qubits[..i].contains(q) {
                return Err(Error::InvalidOperator(format!("qubit {q} listed twice")));
            }
        }
        let mut out = Vec::with_capacity(qubits.len());
        for &q in qubits {
            let p1 = self.prob_one(q);
            let outcome = rng.random::<f64>() < p1;
            self.collapse_and_reset(q, outcome)?;
            out.push(outcome);
        }
        Ok(out)
    }

    /// Probabilities of the low `n_sys` qubits with the rest traced out.
    pub fn marginal_probs(&self, n_sys: usize) -> Vec<f64> {
        let chunk = 1usize << n_sys;
        let mut out = vec![0.0; chunk];
        for block in self.amps.chunks_exact(chunk) {
            for (o, a) in out.iter_mut().zip(block) {
                *o += a.norm_sqr();
            }
        }
        out
    }

    /// `<X_q>` for every qubit `q < n`.
    pub fn x_expectations(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|q| {
                let mut acc = 0.0;
                for_pairs(self.amps.len(), 1 << q, |x, y| {
                    acc += (self.amps[x].conj() * self.amps[y]).re;
                });
                2.0 * acc
            })
            .collect()
    }

    /// Debug dump: qubit count as u64, then interleaved re/im doubles, all little-endian.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.n_qubits as u64).to_le_bytes())?;
        for a in &self.amps {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n > 40 {
            return Err(Error::Parse(format!("implausible qubit count {n}")));
        }
        let mut amps = Vec::with_capacity(1 << n);
        for _ in 0..1usize << n {
            r.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            amps.push(Complex64::new(re, f64::from_le_bytes(b8)));
        }
        Ok(StateVector { n_qubits: n, amps })
    }
}

/// `exp(-i angle P)` on a raw amplitude slice; every mask bit must index
/// within the slice.
pub fn apply_masks_exp_slice(amps: &mut [Complex64], m: PauliMasks, angle: f64) {
    let (s, c) = angle.sin_cos();
    if m.flip == 0 {
        let plus = Complex64::new(c, -s);
        let minus = Complex64::new(c, s);
        for (x, a) in amps.iter_mut().enumerate() {
            *a *= if (x & m.phase).count_ones() & 1 == 0 { plus } else { minus };
        }
        return;
    }
    let pivot = 1usize << (usize::BITS - 1 - m.flip.leading_zeros());
    let low = m.flip & (pivot - 1);
    // x in the low half pairs with y = x ^ flip in the high half.
    // amps[x] <- c ax + b_x ay, amps[y] <- c ay + b_y ax, b = base * parity.
    let base = i_pow(m.n_y) * Complex64::new(0.0, -s);
    let pivot_sign = if m.phase & pivot == 0 { 1.0 } else { -1.0 };
    for (k, block) in amps.chunks_exact_mut(pivot << 1).enumerate() {
        let (lo, hi) = block.split_at_mut(pivot);
        let offset = k * (pivot << 1);
        if low == 0 && m.phase == 0 {
            for (ax, ay) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*ax, *ay);
                *ax = Complex64::new(c * x.re + s * y.im, c * x.im - s * y.re);
                *ay = Complex64::new(c * y.re + s * x.im, c * y.im - s * x.re);
            }
        } else if low == 0 {
            for (i, (ax, ay)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let px = parity((offset + i) & m.phase);
                let bx = base * (px * pivot_sign);
                let by = base * px;
                let (x, y) = (*ax, *ay);
                *ax = x * c + y * bx;
                *ay = y * c + x * by;
            }
        } else {
            for i in 0..pivot {
                let j = i ^ low;
                let px = parity((offset + i) & m.phase);
                let py = parity((offset + pivot + j) & m.phase);
                let (x, y) = (lo[i], hi[j]);
                lo[i] = x * c + y * (base * py);
                hi[j] = y * c + x * (base * px);
            }
        }
    }
}

/// `<psi|P|psi>` for unit coefficient.
pub fn masks_expectation(amps: &[Complex64], m: PauliMasks) -> Complex64 {
    if m.flip == 0 {
        let r: f64 = amps.iter().enumerate().map(|(x, a)| parity(x & m.phase) * a.norm_sqr()).sum();
        return Complex64::new(r, 0.0);
    }
    let mut acc = ZERO;
    for (x, a) in amps.iter().enumerate() {
        acc += amps[x ^ m.flip].conj() * a * parity(x & m.phase);
    }
    acc * i_pow(m.n_y)
}

/// Z-basis statistics of the system register: per-site `<Z_i>` and `<Z_a Z_b>` per pair.
pub fn z_statistics(probs: &[f64], n_sys: usize, pairs: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
    let mut z = vec![0.0; n_sys];
    let mut zz = vec![0.0; pairs.len()];
    for (x, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += if x >> i & 1 == 0 { p } else { -p };
        }
        for (k, &(a, b)) in pairs.iter().enumerate() {
            zz[k] += if (x >> a ^ x >> b) & 1 == 0 { p } else { -p };
        }
    }
    (z, zz)
}

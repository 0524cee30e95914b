//! Pauli strings, model Hamiltonians, jump operators and initial states.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{chain_bonds, partition_links, KagomeLattice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    fn letter(self) -> char {
        match self {
            Axis::X => 'X',
            Axis::Y => 'Y',
            Axis::Z => 'Z',
        }
    }

    fn parse(c: &str) -> Option<Axis> {
        match c {
            "X" | "x" => Some(Axis::X),
            "Y" | "y" => Some(Axis::Y),
            "Z" | "z" => Some(Axis::Z),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliString {
    pub coeff: f64,
    pub factors: BTreeMap<usize, Axis>,
}

/// Bit masks of a Pauli string acting on basis state `x`:
/// `P|x> = i^{n_y} (-1)^{popcount(x & phase)} |x ^ flip>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PauliMasks {
    pub flip: usize,
    pub phase: usize,
    pub n_y: u32,
}

impl PauliMasks {
    pub fn commutes_with(&self, other: &PauliMasks) -> bool {
        ((self.flip & other.phase).count_ones() + (self.phase & other.flip).count_ones()) % 2 == 0
    }

    pub fn is_diagonal(&self) -> bool {
        self.flip == 0
    }
}

impl PauliString {
    pub fn new(coeff: f64, factors: impl IntoIterator<Item = (usize, Axis)>) -> Self {
        PauliString { coeff, factors: factors.into_iter().collect() }
    }

    pub fn identity(coeff: f64) -> Self {
        PauliString { coeff, factors: BTreeMap::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn max_site(&self) -> Option<usize> {
        self.factors.keys().next_back().copied()
    }

    pub fn masks(&self) -> PauliMasks {
        let mut m = PauliMasks { flip: 0, phase: 0, n_y: 0 };
        for (&s, &a) in &self.factors {
            let bit = 1usize << s;
            match a {
                Axis::X => m.flip |= bit,
                Axis::Y => {
                    m.flip |= bit;
                    m.phase |= bit;
                    m.n_y += 1;
                }
                Axis::Z => m.phase |= bit,
            }
        }
        m
    }

    pub fn is_diagonal(&self) -> bool {
        self.factors.values().all(|&a| a == Axis::Z)
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = self.factors.iter().filter(|(s, a)| other.factors.get(s).is_some_and(|b| b != *a)).count();
        anti % 2 == 0
    }

    pub fn check_range(&self, n_qubits: usize) -> Result<()> {
        match self.max_site() {
            Some(s) if s >= n_qubits => Err(Error::QubitOutOfRange { qubit: s, n_qubits }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coeff)?;
        for (s, a) in &self.factors {
            write!(f, " {}:{}", s, a.letter())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TermGroup {
    SZ,
    SZZ,
    SX,
    E,
    SE,
}

impl TermGroup {
    fn label(self) -> &'static str {
        match self {
            TermGroup::SZ => "S_Z",
            TermGroup::SZZ => "S_ZZ",
            TermGroup::SX => "S_X",
            TermGroup::E => "E",
            TermGroup::SE => "SE",
        }
    }

    fn parse(s: &str) -> Option<TermGroup> {
        [TermGroup::SZ, TermGroup::SZZ, TermGroup::SX, TermGroup::E, TermGroup::SE].into_iter().find(|g| g.label() == s)
    }

    /// Group a bare system string would land in.
    pub fn classify(p: &PauliString) -> TermGroup {
        if p.is_diagonal() {
            if p.factors.len() >= 2 {
                TermGroup::SZZ
            } else {
                TermGroup::SZ
            }
        } else {
            TermGroup::SX
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HamiltonianTerms {
    pub terms: Vec<(TermGroup, PauliString)>,
}

impl HamiltonianTerms {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, group: TermGroup, p: PauliString) {
        self.terms.push((group, p));
    }

    pub fn extend(&mut self, other: &HamiltonianTerms) {
        self.terms.extend(other.terms.iter().cloned());
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn group(&self, g: TermGroup) -> impl Iterator<Item = &PauliString> {
        self.terms.iter().filter(move |(h, _)| *h == g).map(|(_, p)| p)
    }

    pub fn strings(&self) -> impl Iterator<Item = &PauliString> {
        self.terms.iter().map(|(_, p)| p)
    }

    pub fn n_qubits_min(&self) -> usize {
        self.strings().filter_map(|p| p.max_site()).max().map_or(0, |s| s + 1)
    }

    /// Term-list text: one `coeff site:axis ...` line per string, with
    /// `# group: NAME` headers so the grouping survives a round trip.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = None;
        for (g, p) in &self.terms {
            if current != Some(*g) {
                out.push_str(&format!("# group: {}\n", g.label()));
                current = Some(*g);
            }
            out.push_str(&format!("{p}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut h = HamiltonianTerms::new();
        let mut current = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(name) = rest.trim().strip_prefix("group:") {
                    current = Some(
                        TermGroup::parse(name.trim())
                            .ok_or_else(|| Error::Parse(format!("line {}: unknown group {name}", lineno + 1)))?,
                    );
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let coeff: f64 =
                parts.next().unwrap().parse().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let mut factors = BTreeMap::new();
            for tok in parts {
                let (s, a) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::Parse(format!("line {}: bad factor {tok}", lineno + 1)))?;
                let s: usize = s.parse().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                let a = Axis::parse(a).ok_or_else(|| Error::Parse(format!("line {}: bad axis {a}", lineno + 1)))?;
                if factors.insert(s, a).is_some() {
                    return Err(Error::Parse(format!("line {}: site {s} repeated", lineno + 1)));
                }
            }
            let p = PauliString { coeff, factors };
            let g = current.unwrap_or_else(|| TermGroup::classify(&p));
            h.push(g, p);
        }
        Ok(h)
    }
}

/// A system model: Hamiltonian plus the geometry the channel and analysis use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpinModel {
    pub name: String,
    pub n_sites: usize,
    pub hamiltonian: HamiltonianTerms,
    pub bonds: Vec<(usize, usize)>,
    pub triangles: Vec<[usize; 3]>,
}

fn ordered_bonds(lat: &KagomeLattice) -> Vec<usize> {
    let part = partition_links(lat);
    part.down.into_iter().chain(part.up).collect()
}

pub fn build_afim(lat: &KagomeLattice, gx: f64, gz: f64) -> HamiltonianTerms {
    let mut h = HamiltonianTerms::new();
    for bi in ordered_bonds(lat) {
        let b = &lat.bonds[bi];
        h.push(TermGroup::SZZ, PauliString::new(b.multiplicity as f64, [(b.a, Axis::Z), (b.b, Axis::Z)]));
    }
    for s in 0..lat.n_sites {
        h.push(TermGroup::SX, PauliString::new(gx, [(s, Axis::X)]));
    }
    for s in 0..lat.n_sites {
        h.push(TermGroup::SZ, PauliString::new(gz, [(s, Axis::Z)]));
    }
    h
}

pub fn build_afhm(lat: &KagomeLattice) -> HamiltonianTerms {
    let mut h = HamiltonianTerms::new();
    let order = ordered_bonds(lat);
    for &bi in &order {
        let b = &lat.bonds[bi];
        h.push(TermGroup::SZZ, PauliString::new(b.multiplicity as f64, [(b.a, Axis::Z), (b.b, Axis::Z)]));
    }
    for &bi in &order {
        let b = &lat.bonds[bi];
        for ax in [Axis::X, Axis::Y] {
            h.push(TermGroup::SX, PauliString::new(b.multiplicity as f64, [(b.a, ax), (b.b, ax)]));
        }
    }
    h
}

/// `-j Σ Z_i Z_{i+1} + g Σ X_i` on an open or periodic chain.
pub fn build_tfim_chain(n: usize, j: f64, g: f64, periodic: bool) -> HamiltonianTerms {
    let mut h = HamiltonianTerms::new();
    for (a, b) in chain_bonds(n, periodic) {
        h.push(TermGroup::SZZ, PauliString::new(-j, [(a, Axis::Z), (b, Axis::Z)]));
    }
    for s in 0..n {
        h.push(TermGroup::SX, PauliString::new(g, [(s, Axis::X)]));
    }
    h
}

/// Antiferromagnetic Ising chain with the kagome field convention.
pub fn build_afim_chain(n: usize, gx: f64, gz: f64, periodic: bool) -> HamiltonianTerms {
    let mut h = HamiltonianTerms::new();
    for (a, b) in chain_bonds(n, periodic) {
        h.push(TermGroup::SZZ, PauliString::new(1.0, [(a, Axis::Z), (b, Axis::Z)]));
    }
    for s in 0..n {
        h.push(TermGroup::SX, PauliString::new(gx, [(s, Axis::X)]));
    }
    for s in 0..n {
        h.push(TermGroup::SZ, PauliString::new(gz, [(s, Axis::Z)]));
    }
    h
}

pub fn build_afhm_chain(n: usize, periodic: bool) -> HamiltonianTerms {
    let mut h = HamiltonianTerms::new();
    let bonds = chain_bonds(n, periodic);
    for &(a, b) in &bonds {
        h.push(TermGroup::SZZ, PauliString::new(1.0, [(a, Axis::Z), (b, Axis::Z)]));
    }
    for &(a, b) in &bonds {
        for ax in [Axis::X, Axis::Y] {
            h.push(TermGroup::SX, PauliString::new(1.0, [(a, ax), (b, ax)]));
        }
    }
    h
}

impl SpinModel {
    pub fn kagome_afim(lat: &KagomeLattice, gx: f64, gz: f64) -> Self {
        Self::from_lattice("afim", lat, build_afim(lat, gx, gz))
    }

    pub fn kagome_afhm(lat: &KagomeLattice) -> Self {
        Self::from_lattice("afhm", lat, build_afhm(lat))
    }

    fn from_lattice(name: &str, lat: &KagomeLattice, hamiltonian: HamiltonianTerms) -> Self {
        SpinModel {
            name: name.into(),
            n_sites: lat.n_sites,
            hamiltonian,
            bonds: lat.bonds.iter().map(|b| (b.a, b.b)).collect(),
            triangles: lat.triangles().map(|t| t.corners).collect(),
        }
    }

    pub fn chain(name: &str, n: usize, periodic: bool, hamiltonian: HamiltonianTerms) -> Self {
        SpinModel { name: name.into(), n_sites: n, hamiltonian, bonds: chain_bonds(n, periodic), triangles: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JumpOperator {
    SinglePauli { site: usize, axis: Axis },
    SingletPair { i: usize, j: usize },
}

impl JumpOperator {
    /// System strings with their weights, `O = Σ w P`.
    pub fn strings(&self) -> Vec<PauliString> {
        match *self {
            JumpOperator::SinglePauli { site, axis } => vec![PauliString::new(1.0, [(site, axis)])],
            JumpOperator::SingletPair { i, j } => {
                Axis::ALL.iter().map(|&a| PauliString::new(1.0 / 3.0, [(i, a), (j, a)])).collect()
            }
        }
    }

    pub fn sites(&self) -> Vec<usize> {
        match *self {
            JumpOperator::SinglePauli { site, .. } => vec![site],
            JumpOperator::SingletPair { i, j } => vec![i, j],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            JumpOperator::SinglePauli { .. } => "single_pauli",
            JumpOperator::SingletPair { .. } => "singlet_pair",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpFamily {
    SinglePauliOnly,
    /// `singlet_weight` is the probability of drawing a pair operator; `None`
    /// draws uniformly over the union of single-site Paulis and site pairs.
    MixedWithSinglets {
        singlet_weight: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub bohr_frequencies: Vec<f64>,
    pub pairing: Vec<usize>,
}

impl EnvSpec {
    pub fn n_env(&self) -> usize {
        self.bohr_frequencies.len()
    }

    pub fn validate(&self, n_sites: usize) -> Result<()> {
        if self.pairing.len() != self.bohr_frequencies.len() {
            return Err(Error::InvalidOperator("pairing and frequency counts differ".into()));
        }
        if self.bohr_frequencies.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidOperator("Bohr frequencies must be positive".into()));
        }
        let mut seen = vec![false; n_sites];
        for &s in &self.pairing {
            if s >= n_sites {
                return Err(Error::InvalidOperator(format!("pairing target {s} outside lattice")));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::InvalidOperator(format!("pairing target {s} used twice")));
            }
        }
        Ok(())
    }
}

/// `-Σ ω_e Z_e / 2` with env qubit `e` at index `n_sys + e`.
pub fn build_env_hamiltonian(env: &EnvSpec, n_sys: usize) -> HamiltonianTerms {
    let mut h = HamiltonianTerms::new();
    for (e, &w) in env.bohr_frequencies.iter().enumerate() {
        h.push(TermGroup::E, PauliString::new(-w / 2.0, [(n_sys + e, Axis::Z)]));
    }
    h
}

pub fn build_coupling(env: &EnvSpec, jumps: &[JumpOperator], n_sys: usize) -> Result<HamiltonianTerms> {
    if jumps.len() != env.n_env() {
        return Err(Error::InvalidOperator(format!("{} jumps for {} environment qubits", jumps.len(), env.n_env())));
    }
    let mut h = HamiltonianTerms::new();
    for (e, jump) in jumps.iter().enumerate() {
        if let JumpOperator::SingletPair { i, j } = *jump {
            if i == j {
                return Err(Error::InvalidOperator("singlet pair needs distinct sites".into()));
            }
        }
        for s in jump.sites() {
            if s >= n_sys {
                return Err(Error::InvalidOperator(format!("jump site {s} outside lattice")));
            }
        }
        if env.pairing.get(e).is_some_and(|&p| p >= n_sys) {
            return Err(Error::InvalidOperator(format!("pairing target {} outside lattice", env.pairing[e])));
        }
        for mut p in jump.strings() {
            p.factors.insert(n_sys + e, Axis::X);
            h.push(TermGroup::SE, p);
        }
    }
    Ok(h)
}

pub fn sample_jumps<R: Rng + ?Sized>(
    rng: &mut R,
    family: JumpFamily,
    env: &EnvSpec,
    n_sites: usize,
) -> Vec<JumpOperator> {
    let n_pairs = n_sites * n_sites.saturating_sub(1) / 2;
    env.pairing
        .iter()
        .map(|&site| match family {
            JumpFamily::SinglePauliOnly => JumpOperator::SinglePauli { site, axis: Axis::ALL[rng.random_range(0..3)] },
            JumpFamily::MixedWithSinglets { singlet_weight } => {
                let pick_pair = match singlet_weight {
                    None => rng.random_range(0..3 * n_sites + n_pairs) >= 3 * n_sites,
                    Some(w) => n_pairs > 0 && rng.random::<f64>() < w,
                };
                if pick_pair {
                    let (i, j) = unrank_pair(rng.random_range(0..n_pairs), n_sites);
                    JumpOperator::SingletPair { i, j }
                } else {
                    let k = rng.random_range(0..3 * n_sites);
                    JumpOperator::SinglePauli { site: k / 3, axis: Axis::ALL[k % 3] }
                }
            }
        })
        .collect()
}

fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    unreachable!("pair rank out of range")
}

/// Every operator the family can draw, in a fixed order.
pub fn jump_support(family: JumpFamily, n_sites: usize) -> Vec<JumpOperator> {
    let mut out: Vec<JumpOperator> =
        (0..n_sites).flat_map(|site| Axis::ALL.map(|axis| JumpOperator::SinglePauli { site, axis })).collect();
    if matches!(family, JumpFamily::MixedWithSinglets { .. }) {
        for i in 0..n_sites {
            for j in i + 1..n_sites {
                out.push(JumpOperator::SingletPair { i, j });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    RandomProduct,
    SingletDimerCover,
    AllZero,
}

/// Computational description of an initial system state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    Product(Vec<bool>),
    /// Product of `(|01> - |10>)/sqrt 2` over the listed pairs.
    Singlets(Vec<(usize, usize)>),
}

pub fn sample_initial_state<R: Rng + ?Sized>(
    rng: &mut R,
    kind: &InitialKind,
    model: &SpinModel,
) -> Result<InitialState> {
    match kind {
        InitialKind::RandomProduct => Ok(InitialState::Product((0..model.n_sites).map(|_| rng.random()).collect())),
        InitialKind::AllZero => Ok(InitialState::Product(vec![false; model.n_sites])),
        InitialKind::SingletDimerCover => Ok(InitialState::Singlets(perfect_matching(model.n_sites, &model.bonds)?)),
    }
}

/// A perfect matching on the bond graph by depth-first search, lowest site first.
pub fn perfect_matching(n: usize, bonds: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    if n % 2 == 1 {
        return Err(Error::NoPerfectMatching);
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in bonds {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    fn go(adj: &[Vec<usize>], used: &mut [bool], out: &mut Vec<(usize, usize)>) -> bool {
        let Some(i) = used.iter().position(|&u| !u) else { return true };
        used[i] = true;
        for &j in &adj[i] {
            if !used[j] {
                used[j] = true;
                out.push((i, j));
                if go(adj, used, out) {
                    return true;
                }
                out.pop();
                used[j] = false;
            }
        }
        used[i] = false;
        false
    }
    let mut used = vec![false; n];
    let mut out = Vec::new();
    if go(&adj, &mut used, &mut out) {
        Ok(out)
    } else {
        Err(Error::NoPerfectMatching)
    }
}

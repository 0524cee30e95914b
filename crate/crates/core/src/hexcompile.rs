//! Heavy-hex cost model for one Trotter step of the kagome Ising evolution.
//!
//! Every triangle slot gets a degree-3 center qubit wired to its corners, and
//! every site sits between its up and down centers, so the coupling graph is
//! heavy-hex. Centers double as environment qubits. A triangle's three ZZ
//! rotations are applied by swapping one corner into the center and running a
//! nested CX ladder over the resulting line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{partition_links, KagomeLattice, Orientation, Slot};

/// Two-qubit depth of an up/down triangle pair sharing the vertex with gadget
/// label `i` in the first triangle and `j` in the second.
pub const OVERLAP_DEPTH: [[u32; 3]; 3] = [[12, 15, 17], [15, 15, 18], [17, 18, 24]];

/// Depth charged for a triangle that overlaps nothing.
pub const ISOLATED_TRIANGLE_DEPTH: u32 = OVERLAP_DEPTH[0][0];

/// Vertex labels assigned to triangle corners in canonical order.
pub const CANONICAL_LABELS: [u8; 3] = [0, 1, 2];

pub const ALL_LABELINGS: [[u8; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeavyHexGraph {
    pub n_qubits: usize,
    pub edges: Vec<(usize, usize)>,
}

impl HeavyHexGraph {
    pub fn new(n_qubits: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidConfig(format!("self-coupling on qubit {a}")));
            }
            for q in [a, b] {
                if q >= n_qubits {
                    return Err(Error::QubitOutOfRange { qubit: q, n_qubits });
                }
            }
            set.insert((a.min(b), a.max(b)));
        }
        let g = HeavyHexGraph { n_qubits, edges: set.into_iter().collect() };
        if let Some(q) = (0..n_qubits).find(|&q| g.degree(q) > 3) {
            return Err(Error::InvalidConfig(format!("qubit {q} has degree {}", g.degree(q))));
        }
        Ok(g)
    }

    /// Parses `a b` pairs, one per line; `#` starts a comment. The qubit count
    /// is one more than the largest id.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ids: Vec<usize> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Parse(format!("line {}: bad qubit id `{s}`", lineno + 1))))
                .collect::<Result<_>>()?;
            if ids.len() != 2 {
                return Err(Error::Parse(format!("line {}: expected two qubit ids", lineno + 1)));
            }
            edges.push((ids[0], ids[1]));
        }
        let n = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
        Self::new(n, edges)
    }

    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn degree(&self, q: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == q || b == q).count()
    }

    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        Self::new(self.n_qubits, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedding {
    pub site_qubit: Vec<usize>,
    pub slot_qubit: Vec<(Slot, usize)>,
    pub env_qubit: Vec<usize>,
    /// System site each environment qubit couples to.
    pub env_site: Vec<usize>,
    /// Physical path `[a, center, b]` for every bond.
    pub routes: Vec<[usize; 3]>,
}

impl Embedding {
    pub fn center(&self, slot: Slot) -> Option<usize> {
        self.slot_qubit.iter().find(|(s, _)| *s == slot).map(|&(_, q)| q)
    }

    pub fn validate(&self, graph: &HeavyHexGraph, lat: &KagomeLattice) -> Result<()> {
        if self.site_qubit.len() != lat.n_sites {
            return Err(Error::DimensionMismatch { expected: lat.n_sites, got: self.site_qubit.len() });
        }
        let mut used = BTreeSet::new();
        for &q in self.site_qubit.iter().chain(self.slot_qubit.iter().map(|(_, q)| q)) {
            if q >= graph.n_qubits {
                return Err(Error::QubitOutOfRange { qubit: q, n_qubits: graph.n_qubits });
            }
            if !used.insert(q) {
                return Err(Error::InvalidConfig(format!("qubit {q} assigned twice")));
            }
        }
        let sys: BTreeSet<usize> = self.site_qubit.iter().copied().collect();
        let mut env_seen = BTreeSet::new();
        for (&e, &s) in self.env_qubit.iter().zip(&self.env_site) {
            if sys.contains(&e) {
                return Err(Error::InvalidConfig(format!("environment qubit {e} is a system qubit")));
            }
            if !env_seen.insert(e) {
                return Err(Error::InvalidConfig(format!("environment qubit {e} used twice")));
            }
            if !graph.has_edge(e, self.site_qubit[s]) {
                return Err(Error::InvalidConfig(format!("environment qubit {e} not coupled to site {s}")));
            }
        }
        if self.routes.len() != lat.bonds.len() {
            return Err(Error::DimensionMismatch { expected: lat.bonds.len(), got: self.routes.len() });
        }
        for (bond, route) in lat.bonds.iter().zip(&self.routes) {
            if route[0] != self.site_qubit[bond.a] || route[2] != self.site_qubit[bond.b] {
                return Err(Error::InvalidConfig(format!("route for bond ({}, {}) has wrong ends", bond.a, bond.b)));
            }
            if !graph.has_edge(route[0], route[1]) || !graph.has_edge(route[1], route[2]) {
                return Err(Error::InvalidConfig(format!("route {route:?} leaves the coupling graph")));
            }
        }
        Ok(())
    }

    /// Applies a physical-qubit permutation.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Embedding {
            site_qubit: self.site_qubit.iter().map(|&q| perm[q]).collect(),
            slot_qubit: self.slot_qubit.iter().map(|&(s, q)| (s, perm[q])).collect(),
            env_qubit: self.env_qubit.iter().map(|&q| perm[q]).collect(),
            env_site: self.env_site.clone(),
            routes: self.routes.iter().map(|r| r.map(|q| perm[q])).collect(),
        }
    }
}

/// Builds the heavy-hex graph of `lat` and places `n_env` environment qubits,
/// each coupled to a distinct site. Slot centers are used first; the rest are
/// pendant qubits on the spare port of unmatched sites.
pub fn embed_kagome(lat: &KagomeLattice, n_env: usize) -> Result<(HeavyHexGraph, Embedding)> {
    let slots = lat.occupied_slots();
    let n = lat.n_sites;
    if n_env > n {
        return Err(Error::InvalidConfig(format!("cannot place {n_env} environment qubits on {n} sites")));
    }
    let site_qubit: Vec<usize> = (0..n).collect();
    let slot_qubit: Vec<(Slot, usize)> = slots.iter().enumerate().map(|(i, &s)| (s, n + i)).collect();
    let mut edges = Vec::new();
    let mut adjacent: Vec<Vec<usize>> = Vec::new();
    for &(slot, q) in &slot_qubit {
        let sites: Vec<usize> = lat.slot_sites(slot).iter().flatten().copied().collect();
        let touched: Vec<usize> =
            sites.into_iter().filter(|&s| lat.bonds.iter().any(|b| b.slot == slot && (b.a == s || b.b == s))).collect();
        edges.extend(touched.iter().map(|&s| (s, q)));
        adjacent.push(touched);
    }

    let mut env: Vec<(usize, usize)> =
        match_centers(&adjacent, n).into_iter().take(n_env).map(|(c, s)| (slot_qubit[c].1, s)).collect();
    let taken: BTreeSet<usize> = env.iter().map(|&(_, s)| s).collect();
    let mut next = n + slots.len();
    for s in (0..n).filter(|s| !taken.contains(s)) {
        if env.len() == n_env {
            break;
        }
        edges.push((s, next));
        env.push((next, s));
        next += 1;
    }
    let graph = HeavyHexGraph::new(next, edges)?;
    let (env_qubit, env_site): (Vec<usize>, Vec<usize>) = env.into_iter().unzip();

    let center: BTreeMap<Slot, usize> = slot_qubit.iter().copied().collect();
    let routes = lat.bonds.iter().map(|b| [b.a, center[&b.slot], b.b]).collect();
    let emb = Embedding { site_qubit, slot_qubit, env_qubit, env_site, routes };
    emb.validate(&graph, lat)?;
    Ok((graph, emb))
}

/// Maximum bipartite matching of centers to sites (augmenting paths), sorted by
/// center.
fn match_centers(adjacent: &[Vec<usize>], n_sites: usize) -> Vec<(usize, usize)> {
    fn augment(c: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &s in &adj[c] {
            if std::mem::replace(&mut seen[s], true) {
                continue;
            }
            if owner[s].is_none_or(|o| augment(o, adj, seen, owner)) {
                owner[s] = Some(c);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_sites];
    for c in 0..adjacent.len() {
        augment(c, adjacent, &mut vec![false; n_sites], &mut owner);
    }
    let mut pairs: Vec<(usize, usize)> = owner.iter().enumerate().filter_map(|(s, o)| o.map(|c| (c, s))).collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Gate {
    Cx {
        control: usize,
        target: usize,
    },
    /// `exp(-i angle Z Z)`
    Rzz {
        a: usize,
        b: usize,
        angle: f64,
    },
    /// `exp(-i angle Z)`
    Rz {
        q: usize,
        angle: f64,
    },
}

impl Gate {
    pub fn two_qubit(&self) -> Option<(usize, usize)> {
        match *self {
            Gate::Cx { control, target } => Some((control, target)),
            Gate::Rzz { a, b, .. } => Some((a, b)),
            Gate::Rz { .. } => None,
        }
    }

    pub fn inverse(&self) -> Gate {
        match *self {
            Gate::Cx { .. } => *self,
            Gate::Rzz { a, b, angle } => Gate::Rzz { a, b, angle: -angle },
            Gate::Rz { q, angle } => Gate::Rz { q, angle: -angle },
        }
    }

    fn row(&self) -> (&'static str, usize, usize, f64) {
        match *self {
            Gate::Cx { control, target } => ("cx", control, target, 0.0),
            Gate::Rzz { a, b, angle } => ("rzz", a, b, angle),
            Gate::Rz { q, angle } => ("rz", q, q, angle),
        }
    }
}

fn swap(a: usize, b: usize) -> [Gate; 3] {
    [Gate::Cx { control: a, target: b }, Gate::Cx { control: b, target: a }, Gate::Cx { control: a, target: b }]
}

/// The three ZZ rotations of a triangle. `by_label[l]` is the corner carrying
/// gadget label `l`; label 2 is swapped into `center`. `angles` are for the
/// label pairs (0,1), (1,2), (0,2).
pub fn triangle_gadget(by_label: [usize; 3], center: usize, angles: [f64; 3]) -> Vec<Gate> {
    let [a, b, s] = by_label;
    let c = center;
    let mut g = Vec::with_capacity(19);
    g.extend(swap(c, s));
    g.push(Gate::Cx { control: c, target: b });
    g.push(Gate::Rz { q: b, angle: angles[1] });
    g.push(Gate::Cx { control: a, target: c });
    g.push(Gate::Rz { q: c, angle: angles[2] });
    g.push(Gate::Rzz { a: c, b, angle: angles[0] });
    g.push(Gate::Cx { control: a, target: c });
    g.push(Gate::Cx { control: c, target: b });
    g.extend(swap(c, s));
    g
}

/// A lone bond `(u, w)` routed through the center both ends touch.
pub fn bond_gadget(u: usize, w: usize, center: usize, angle: f64) -> Vec<Gate> {
    let mut g = Vec::with_capacity(7);
    g.extend(swap(center, u));
    g.push(Gate::Rzz { a: center, b: w, angle });
    g.extend(swap(center, u));
    g
}

/// Two-qubit gates packed greedily into the earliest layer after every
/// earlier gate on the same qubits. Single-qubit gates are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSchedule {
    pub layers: Vec<Vec<Gate>>,
}

impl GateSchedule {
    pub fn from_circuit(circuit: &[Gate]) -> Self {
        let mut ready: BTreeMap<usize, usize> = BTreeMap::new();
        let mut layers: Vec<Vec<Gate>> = Vec::new();
        for g in circuit {
            let Some((a, b)) = g.two_qubit() else { continue };
            let l = ready.get(&a).copied().unwrap_or(0).max(ready.get(&b).copied().unwrap_or(0));
            if l == layers.len() {
                layers.push(Vec::new());
            }
            layers[l].push(*g);
            ready.insert(a, l + 1);
            ready.insert(b, l + 1);
        }
        GateSchedule { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn parallelism(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.layers.iter().flatten()
    }

    /// Checks that no qubit is touched twice within a layer.
    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for g in layer {
                let (a, b) = g.two_qubit().ok_or_else(|| Error::InvalidConfig(format!("layer {i} holds a 1q gate")))?;
                if a == b || !seen.insert(a) || !seen.insert(b) {
                    return Err(Error::InvalidConfig(format!("layer {i} reuses a qubit")));
                }
            }
        }
        Ok(())
    }

    /// Checks every gate acts on a coupling of `graph`.
    pub fn check_couplings(&self, graph: &HeavyHexGraph) -> Result<()> {
        for g in self.gates() {
            let (a, b) = g.two_qubit().expect("scheduled gates are 2q");
            if !graph.has_edge(a, b) {
                return Err(Error::InvalidConfig(format!("gate on ({a}, {b}) is not a coupling")));
            }
        }
        Ok(())
    }

    /// `{"layers": [[[op, q1, q2, angle], ...], ...]}`
    pub fn to_json(&self) -> String {
        let layers: Vec<Vec<(String, usize, usize, f64)>> = self
            .layers
            .iter()
            .map(|l| {
                l.iter()
                    .map(|g| {
                        let (op, a, b, t) = g.row();
                        (op.to_string(), a, b, t)
                    })
                    .collect()
            })
            .collect();
        serde_json::to_string(&serde_json::json!({ "layers": layers })).expect("schedule serializes")
    }
}

/// Gadget labels of every complete triangle, aligned with the lattice lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orientations {
    pub up: Vec<[u8; 3]>,
    pub down: Vec<[u8; 3]>,
}

impl Orientations {
    pub fn canonical(lat: &KagomeLattice) -> Self {
        Orientations {
            up: vec![CANONICAL_LABELS; lat.up_triangles.len()],
            down: vec![CANONICAL_LABELS; lat.down_triangles.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ItemKind {
    Triangle(Orientation, usize),
    Bond(usize),
}

#[derive(Debug, Clone)]
struct Item {
    kind: ItemKind,
    /// 0 for the first (down) layer, 1 for the second.
    layer: u8,
    qubits: Vec<usize>,
}

fn step_items(lat: &KagomeLattice, emb: &Embedding) -> Result<Vec<Item>> {
    let part = partition_links(lat);
    let in_triangle: BTreeSet<usize> = lat.triangles().flat_map(|t| t.bonds).collect();
    let center =
        |slot: Slot| emb.center(slot).ok_or_else(|| Error::InvalidConfig(format!("slot {slot:?} has no center qubit")));
    let mut items = Vec::new();
    for (layer, orientation, tris, bonds) in
        [(0u8, Orientation::Down, &lat.down_triangles, &part.down), (1u8, Orientation::Up, &lat.up_triangles, &part.up)]
    {
        for (i, t) in tris.iter().enumerate() {
            let mut qubits: Vec<usize> = t.corners.iter().map(|&s| emb.site_qubit[s]).collect();
            qubits.push(center(t.slot)?);
            items.push(Item { kind: ItemKind::Triangle(orientation, i), layer, qubits });
        }
        for &b in bonds.iter().filter(|b| !in_triangle.contains(b)) {
            items.push(Item { kind: ItemKind::Bond(b), layer, qubits: emb.routes[b].to_vec() });
        }
    }
    Ok(items)
}

fn labels_of(orient: &Orientations, o: Orientation, i: usize) -> [u8; 3] {
    match o {
        Orientation::Up => orient.up[i],
        Orientation::Down => orient.down[i],
    }
}

fn item_circuit(lat: &KagomeLattice, emb: &Embedding, orient: &Orientations, item: &Item, angle: f64) -> Vec<Gate> {
    match item.kind {
        ItemKind::Triangle(o, i) => {
            let t = match o {
                Orientation::Up => &lat.up_triangles[i],
                Orientation::Down => &lat.down_triangles[i],
            };
            let labels = labels_of(orient, o, i);
            let mut by_label = [0; 3];
            for k in 0..3 {
                by_label[labels[k] as usize] = emb.site_qubit[t.corners[k]];
            }
            let corner_label = |s: usize| labels[t.corners.iter().position(|&c| c == s).expect("corner")];
            let mut angles = [0.0; 3];
            for &b in &t.bonds {
                let bond = &lat.bonds[b];
                let pair =
                    (corner_label(bond.a).min(corner_label(bond.b)), corner_label(bond.a).max(corner_label(bond.b)));
                let slot = match pair {
                    (0, 1) => 0,
                    (1, 2) => 1,
                    _ => 2,
                };
                angles[slot] = angle * bond.multiplicity as f64;
            }
            triangle_gadget(by_label, item.qubits[3], angles)
        }
        ItemKind::Bond(b) => {
            let r = emb.routes[b];
            bond_gadget(r[0], r[2], r[1], angle * lat.bonds[b].multiplicity as f64)
        }
    }
}

/// Label carried by physical qubit `q` in a triangle item, if it is a corner.
fn corner_label(lat: &KagomeLattice, emb: &Embedding, orient: &Orientations, item: &Item, q: usize) -> Option<u8> {
    let ItemKind::Triangle(o, i) = item.kind else { return None };
    let t = match o {
        Orientation::Up => &lat.up_triangles[i],
        Orientation::Down => &lat.down_triangles[i],
    };
    let k = t.corners.iter().position(|&s| emb.site_qubit[s] == q)?;
    Some(labels_of(orient, o, i)[k])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DepthScore {
    pub worst: u32,
    pub worst_pairs: usize,
    pub total: u64,
}

struct CostModel<'a> {
    lat: &'a KagomeLattice,
    emb: &'a Embedding,
    items: Vec<Item>,
    /// Item index pairs `(first, second)` in execution order that share a qubit.
    pairs: Vec<(usize, usize)>,
}

impl<'a> CostModel<'a> {
    fn new(lat: &'a KagomeLattice, emb: &'a Embedding) -> Result<Self> {
        let items = step_items(lat, emb)?;
        let mut pairs = Vec::new();
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                if items[i].qubits.iter().any(|q| items[j].qubits.contains(q)) {
                    pairs.push((i, j));
                }
            }
        }
        Ok(CostModel { lat, emb, items, pairs })
    }

    fn explicit(&self, orient: &Orientations, idx: &[usize]) -> u32 {
        let circuit: Vec<Gate> =
            idx.iter().flat_map(|&i| item_circuit(self.lat, self.emb, orient, &self.items[i], 1.0)).collect();
        GateSchedule::from_circuit(&circuit).depth() as u32
    }

    fn pair_cost(&self, orient: &Orientations, i: usize, j: usize) -> (u32, Option<(u8, u8)>) {
        let (a, b) = (&self.items[i], &self.items[j]);
        let triangles = matches!(a.kind, ItemKind::Triangle(..)) && matches!(b.kind, ItemKind::Triangle(..));
        if triangles && a.layer != b.layer {
            let shared: Vec<usize> = a.qubits.iter().filter(|q| b.qubits.contains(q)).copied().collect();
            let mut best = (0, None);
            for q in shared {
                if let (Some(la), Some(lb)) =
                    (corner_label(self.lat, self.emb, orient, a, q), corner_label(self.lat, self.emb, orient, b, q))
                {
                    let d = OVERLAP_DEPTH[la as usize][lb as usize];
                    if d > best.0 {
                        best = (d, Some((la, lb)));
                    }
                }
            }
            if best.0 > 0 {
                return best;
            }
        }
        (self.explicit(orient, &[i, j]), None)
    }

    fn standalone(&self, orient: &Orientations, i: usize) -> u32 {
        match self.items[i].kind {
            ItemKind::Triangle(..) => ISOLATED_TRIANGLE_DEPTH,
            ItemKind::Bond(_) => self.explicit(orient, &[i]),
        }
    }

    fn score(&self, orient: &Orientations) -> (DepthScore, Option<(u8, u8)>) {
        let mut costs: Vec<(u32, Option<(u8, u8)>)> =
            (0..self.items.len()).map(|i| (self.standalone(orient, i), None)).collect();
        costs.extend(self.pairs.iter().map(|&(i, j)| self.pair_cost(orient, i, j)));
        let worst = costs.iter().map(|c| c.0).max().unwrap_or(0);
        let class = costs.iter().filter(|c| c.0 == worst).find_map(|c| c.1);
        let score = DepthScore {
            worst,
            worst_pairs: costs.iter().filter(|c| c.0 == worst).count(),
            total: costs.iter().map(|c| c.0 as u64).sum(),
        };
        (score, class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationReport {
    pub orientations: Orientations,
    pub score: DepthScore,
    /// Overlap class `(first, second)` realizing the worst depth, when it is a
    /// triangle pair.
    pub worst_class: Option<(u8, u8)>,
    /// Triangle pairs left in a class of depth 18 or more.
    pub costly_pairs: usize,
}

fn costly_pairs(model: &CostModel, orient: &Orientations) -> usize {
    model.pairs.iter().filter(|&&(i, j)| matches!(model.pair_cost(orient, i, j), (d, Some(_)) if d >= 18)).count()
}

/// Starts from the canonical labels and improves greedily, one triangle at a
/// time, on (worst depth, number of worst pairs, total).
pub fn optimize_orientations(lat: &KagomeLattice, emb: &Embedding) -> Result<OrientationReport> {
    let model = CostModel::new(lat, emb)?;
    let mut orient = Orientations::canonical(lat);
    let mut best = model.score(&orient).0;
    loop {
        let mut improved = false;
        for o in [Orientation::Down, Orientation::Up] {
            let n = match o {
                Orientation::Up => orient.up.len(),
                Orientation::Down => orient.down.len(),
            };
            for i in 0..n {
                for labels in ALL_LABELINGS {
                    let mut trial = orient.clone();
                    match o {
                        Orientation::Up => trial.up[i] = labels,
                        Orientation::Down => trial.down[i] = labels,
                    }
                    let s = model.score(&trial).0;
                    if s < best {
                        best = s;
                        orient = trial;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    let (score, worst_class) = model.score(&orient);
    let costly = costly_pairs(&model, &orient);
    Ok(OrientationReport { orientations: orient, score, worst_class, costly_pairs: costly })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub zz_gates: usize,
    pub se_gates: usize,
    /// Depth of the ZZ layers under the overlap table.
    pub zz_depth: u32,
    /// Depth of the same gates under plain greedy layering.
    pub zz_depth_scheduled: usize,
    pub se_depth: usize,
    pub worst_class: Option<(u8, u8)>,
    pub schedule: GateSchedule,
}

fn se_layer(emb: &Embedding, angle: f64) -> Vec<Gate> {
    emb.env_qubit.iter().zip(&emb.env_site).map(|(&e, &s)| Gate::Rzz { a: e, b: emb.site_qubit[s], angle }).collect()
}

fn zz_circuit(lat: &KagomeLattice, emb: &Embedding, orient: &Orientations, items: &[Item], angle: f64) -> Vec<Gate> {
    items.iter().flat_map(|it| item_circuit(lat, emb, orient, it, angle)).collect()
}

/// One second-order step: half the system-environment coupling, the down then
/// up triangle layers, and the other half.
pub fn schedule_trotter_step(lat: &KagomeLattice, emb: &Embedding, orient: &Orientations) -> Result<StepReport> {
    check_orientations(lat, orient)?;
    let model = CostModel::new(lat, emb)?;
    let (score, worst_class) = model.score(orient);
    let zz = zz_circuit(lat, emb, orient, &model.items, 1.0);
    let zz_sched = GateSchedule::from_circuit(&zz);
    let se = GateSchedule::from_circuit(&se_layer(emb, 0.5));
    let mut circuit = se_layer(emb, 0.5);
    circuit.extend(zz);
    circuit.extend(se_layer(emb, 0.5));
    let schedule = GateSchedule::from_circuit(&circuit);
    schedule.validate()?;
    Ok(StepReport {
        zz_gates: zz_sched.gate_count(),
        se_gates: 2 * emb.env_qubit.len(),
        zz_depth: score.worst,
        zz_depth_scheduled: zz_sched.depth(),
        se_depth: se.depth(),
        worst_class,
        schedule,
    })
}

fn check_orientations(lat: &KagomeLattice, orient: &Orientations) -> Result<()> {
    if orient.up.len() != lat.up_triangles.len() || orient.down.len() != lat.down_triangles.len() {
        return Err(Error::InvalidConfig("orientation count does not match the triangles".into()));
    }
    if orient.up.iter().chain(&orient.down).any(|l| !ALL_LABELINGS.contains(l)) {
        return Err(Error::InvalidConfig("orientation is not a permutation of 0, 1, 2".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleDepth {
    pub n_steps: usize,
    /// `n_steps` table depths plus `n_steps + 1` coupling layers.
    pub depth: u32,
    /// Greedy layering of the explicit merged circuit.
    pub depth_scheduled: usize,
    pub two_qubit_gates: usize,
}

/// Depth of `n_steps` consecutive steps. The trailing coupling half-layer of
/// one step and the leading one of the next act on the same pairs and merge
/// into a single layer.
pub fn cycle_depth(lat: &KagomeLattice, emb: &Embedding, orient: &Orientations, n_steps: usize) -> Result<CycleDepth> {
    let step = schedule_trotter_step(lat, emb, orient)?;
    let items = step_items(lat, emb)?;
    let mut circuit = se_layer(emb, 0.5);
    for k in 0..n_steps {
        circuit.extend(zz_circuit(lat, emb, orient, &items, 1.0));
        circuit.extend(se_layer(emb, if k + 1 == n_steps { 0.5 } else { 1.0 }));
    }
    let sched = GateSchedule::from_circuit(&circuit);
    sched.validate()?;
    Ok(CycleDepth {
        n_steps,
        depth: n_steps as u32 * step.zz_depth + (n_steps as u32 + 1) * step.se_depth as u32,
        depth_scheduled: sched.depth(),
        two_qubit_gates: sched.gate_count(),
    })
}

/// Depth of two triangle gadgets that share one corner, labelled `first` in
/// the gadget run first and `second` in the other, under greedy layering.
pub fn scheduled_overlap_depth(first: u8, second: u8) -> usize {
    // corners 0..3 and center 3 for the first triangle; the second reuses
    // qubit `first` as its corner labelled `second`.
    let t1 = triangle_gadget([0, 1, 2], 3, [1.0; 3]);
    let mut by_label = [4, 5, 6];
    by_label[second as usize] = first as usize;
    let t2 = triangle_gadget(by_label, 7, [1.0; 3]);
    GateSchedule::from_circuit(&[t1, t2].concat()).depth()
}

pub fn scheduled_overlap_table() -> [[usize; 3]; 3] {
    let mut t = [[0; 3]; 3];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = scheduled_overlap_depth(i as u8, j as u8);
        }
    }
    t
}

/// Replaces each two-qubit gate, independently with probability `p`, by
/// `g g^-1 g`, then re-layers.
pub fn fold_for_zne(schedule: &GateSchedule, p: f64, seed: u64) -> Result<GateSchedule> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("fold probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(schedule.gate_count());
    for g in schedule.gates() {
        out.push(*g);
        if rng.random::<f64>() < p {
            out.push(g.inverse());
            out.push(*g);
        }
    }
    Ok(GateSchedule::from_circuit(&out))
}

/// Plain-text summary of a compiled step and cycle.
pub fn text_report(step: &StepReport, cycle: &CycleDepth, orient: &OrientationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "zz_gates_per_step {}", step.zz_gates);
    let _ = writeln!(s, "se_gates_per_step {}", step.se_gates);
    let _ = writeln!(s, "zz_depth_per_step {}", step.zz_depth);
    let _ = writeln!(s, "zz_depth_per_step_scheduled {}", step.zz_depth_scheduled);
    match step.worst_class {
        Some((a, b)) => {
            let _ = writeln!(s, "worst_overlap_class {a}{b}");
        }
        None => {
            let _ = writeln!(s, "worst_overlap_class none");
        }
    }
    let _ = writeln!(s, "costly_triangle_pairs {}", orient.costly_pairs);
    let _ = writeln!(s, "cycle_steps {}", cycle.n_steps);
    let _ = writeln!(s, "cycle_depth {}", cycle.depth);
    let _ = writeln!(s, "cycle_depth_scheduled {}", cycle.depth_scheduled);
    let _ = writeln!(s, "cycle_two_qubit_gates {}", cycle.two_qubit_gates);
    s
}
